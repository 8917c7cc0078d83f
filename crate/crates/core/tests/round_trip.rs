use std::sync::Arc;

use gfbeam::beamform::{read_map_binary, write_map_binary, SourceMap};
use gfbeam::csm::{read_csm_binary, write_csm_binary, Csm};
use gfbeam::greens::{read_gf_binary, read_gf_csv, write_gf_binary, write_gf_csv, GfTensor, Provenance};
use gfbeam::scene::build_focus_grid;
use gfbeam::steering::{Preset, SteeringParams};
use gfbeam::{Cplx, Vec3};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    -1e6f64..1e6
}

fn tensor() -> impl Strategy<Value = GfTensor<f64>> {
    (1usize..4, 1usize..5, 1usize..5).prop_flat_map(|(nf, nq, m)| {
        (
            prop::collection::btree_set(1u32..20_000, nf),
            prop::collection::vec((finite(), finite()), nf * nq * m),
        )
            .prop_map(move |(freqs, vals)| {
                let freqs = freqs.into_iter().map(|f| f as f64 * 0.5).collect();
                let vals = vals.into_iter().map(|(r, i)| Cplx::new(r, i)).collect();
                GfTensor::new(freqs, nq, m, vals, Provenance::Imported).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gf_binary_is_lossless(t in tensor()) {
        let mut buf = Vec::new();
        write_gf_binary(&t, &mut buf).unwrap();
        let back: GfTensor<f64> = read_gf_binary(buf.as_slice()).unwrap();
        prop_assert_eq!(back.frequencies, t.frequencies);
        prop_assert_eq!(back.values, t.values);
    }

    #[test]
    fn gf_csv_is_lossless(t in tensor()) {
        let mut buf = Vec::new();
        write_gf_csv(&t, &mut buf).unwrap();
        let back: GfTensor<f64> = read_gf_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back.values, t.values);
    }

    #[test]
    fn csm_binary_is_lossless(t in tensor()) {
        // Reuse the tensor values as matrices of size n_mic = n_focus·n_mic rows.
        let m = 2;
        let n = t.values.len() / (m * m);
        prop_assume!(n > 0);
        let csm = Csm {
            frequencies: (1..=n).map(|f| f as f64 * 10.0).collect(),
            n_mic: m,
            matrices: t.values[..n * m * m].to_vec(),
            bin_spacing: None,
            averages: None,
        };
        let mut buf = Vec::new();
        write_csm_binary(&csm, &mut buf).unwrap();
        let back: Csm<f64> = read_csm_binary(buf.as_slice()).unwrap();
        prop_assert_eq!(back, csm);
    }

    #[test]
    fn map_binary_is_lossless(nx in 1usize..6, ny in 1usize..6, seed in prop::collection::vec(0.0f64..1e3, 36)) {
        let grid = Arc::new(build_focus_grid(
            Vec3::new(0.1, -0.2, 0.03),
            (Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)),
            ((nx - 1) as f64 * 0.05, (ny - 1) as f64 * 0.05),
            0.05,
        ).unwrap());
        let maps: Vec<SourceMap<f64>> = [250.0, 500.0].iter().map(|&f| SourceMap {
            frequency: f,
            values: seed[..nx * ny].iter().map(|v| v * f).collect(),
            grid: grid.clone(),
            params: SteeringParams::preset(Preset::II),
            provenance: Provenance::Ism,
        }).collect();
        let mut buf = Vec::new();
        write_map_binary(&maps, &mut buf).unwrap();
        let stack = read_map_binary(buf.as_slice()).unwrap();
        prop_assert_eq!((stack.nx, stack.ny), (nx, ny));
        prop_assert_eq!(stack.frequencies, vec![250.0, 500.0]);
        for (m, v) in maps.iter().zip(&stack.values) {
            prop_assert_eq!(&m.values, v);
        }
    }
}
