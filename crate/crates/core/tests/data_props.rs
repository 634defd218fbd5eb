use fairalm::config::KeyValueConfig;
use fairalm::data::{self, read_csv, split_indices, synth, Dataset, DatasetSchema, Group, Sample, SynthSpec};
use proptest::prelude::*;

fn sample_strategy(dim: usize) -> impl Strategy<Value = Sample> {
    (
        prop::collection::vec(-1e6f64..1e6, dim),
        any::<bool>(),
        any::<bool>(),
    )
        .prop_map(|(x, y, s)| Sample::new(x, y, if s { Group::S1 } else { Group::S0 }))
}

fn dataset_strategy() -> impl Strategy<Value = Dataset> {
    (1usize..5)
        .prop_flat_map(|dim| prop::collection::vec(sample_strategy(dim), 1..60))
        .prop_map(|samples| Dataset::from_samples(samples).unwrap())
}

/// Histogram estimate of the mutual information between the proxy feature
/// and the group, in nats.
fn proxy_group_mi(d: &Dataset, bins: usize) -> f64 {
    let proxy: Vec<f64> = d.samples().iter().map(|s| *s.features.last().unwrap()).collect();
    let lo = proxy.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = proxy.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let mut joint = vec![[0usize; 2]; bins];
    for (s, p) in d.samples().iter().zip(&proxy) {
        let b = (((p - lo) / width) as usize).min(bins - 1);
        joint[b][s.group.index()] += 1;
    }
    let n = d.len() as f64;
    let pg = [0, 1].map(|g| joint.iter().map(|r| r[g]).sum::<usize>() as f64 / n);
    let mut mi = 0.0;
    for row in &joint {
        let pb = (row[0] + row[1]) as f64 / n;
        for g in 0..2 {
            let p = row[g] as f64 / n;
            if p > 0.0 {
                mi += p * (p / (pb * pg[g])).ln();
            }
        }
    }
    mi
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip(d in dataset_strategy()) {
        let mut buf = Vec::new();
        d.write_csv_to(&mut buf).unwrap();
        let back = read_csv(&buf[..], &DatasetSchema::default()).unwrap();
        prop_assert_eq!(back.samples(), d.samples());
        prop_assert_eq!(back.feature_names(), d.feature_names());
    }

    #[test]
    fn split_partitions_and_respects_fraction(
        cells in prop::array::uniform4(2usize..40),
        fraction in 0.05f64..0.95,
        seed in any::<u64>(),
    ) {
        let spec = SynthSpec {
            n_per_cell: [[cells[0], cells[1]], [cells[2], cells[3]]],
            ..SynthSpec::default()
        };
        let d = synth(&spec).unwrap();
        let idx = split_indices(&d, fraction, seed).unwrap();
        let mut all: Vec<usize> = idx.train.iter().chain(&idx.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..d.len()).collect::<Vec<_>>());
        prop_assert_eq!(idx.test.len(), (fraction * d.len() as f64).round() as usize);
        let test = d.subset(&idx.test);
        let got = test.cell_counts();
        for y in 0..2 {
            for s in 0..2 {
                let exact = fraction * spec.n_per_cell[y][s] as f64;
                prop_assert!((got[y][s] as f64 - exact).abs() < 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn synth_matches_requested_cells(
        cells in prop::array::uniform4(1usize..30),
        dim in 2usize..6,
        b in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let spec = SynthSpec {
            n_per_cell: [[cells[0], cells[1]], [cells[2], cells[3]]],
            dim,
            bias_strength: b,
            separation: 2.0,
            seed,
        };
        let d = synth(&spec).unwrap();
        prop_assert_eq!(d.cell_counts(), spec.n_per_cell);
        prop_assert_eq!(d.dim(), dim);
        prop_assert_eq!(synth(&spec).unwrap(), d);
    }

    #[test]
    fn synth_spec_survives_key_values(
        cells in prop::array::uniform4(1usize..1000),
        dim in 2usize..50,
        b in 0.0f64..=1.0,
        sep in 0.01f64..10.0,
        seed in any::<u64>(),
    ) {
        let spec = SynthSpec {
            n_per_cell: [[cells[0], cells[1]], [cells[2], cells[3]]],
            dim,
            bias_strength: b,
            separation: sep,
            seed,
        };
        let mut back = SynthSpec::default();
        let file = fairalm::config::KeyValueFile::parse(&spec.to_key_values()).unwrap();
        back.apply_all(file.section("")).unwrap();
        prop_assert_eq!(back, spec);
    }
}

#[test]
fn proxy_information_grows_with_bias() {
    let strengths = [0.0, 0.2, 0.4, 0.6, 0.8, 0.9, 1.0];
    let mis: Vec<f64> = strengths
        .iter()
        .map(|&b| {
            let spec = SynthSpec {
                n_per_cell: [[2500, 2500], [2500, 2500]],
                bias_strength: b,
                seed: 5,
                ..SynthSpec::default()
            };
            proxy_group_mi(&synth(&spec).unwrap(), 40)
        })
        .collect();
    for w in mis.windows(2) {
        assert!(w[1] >= w[0], "{mis:?}");
    }
    // a perfectly biased proxy carries the full bit
    assert!((mis[6] - 2f64.ln()).abs() < 1e-9);
}

#[test]
fn standardized_train_split_has_zero_mean() {
    let d = synth(&SynthSpec::default()).unwrap();
    let (train, test) = data::split(&d, 0.3, 1).unwrap();
    let st = data::Standardizer::fit(&train).unwrap();
    let t = st.transform(&train).unwrap();
    for j in 0..t.dim() {
        let mean: f64 = t.samples().iter().map(|s| s.features[j]).sum::<f64>() / t.len() as f64;
        assert!(mean.abs() < 1e-12);
    }
    assert_eq!(st.transform(&test).unwrap().len(), test.len());
}
