use mimlfast::data::{generate_synthetic, read_dataset, write_dataset, SynthSpec};

fn spec(seed: u64) -> SynthSpec {
    SynthSpec { n_bags: 2000, z: 5, d: 20, num_labels: 5, k_true: 2, m_true: 3, noise_sigma: 0.1, rng_seed: seed }
}

fn bytes(spec: &SynthSpec) -> Vec<u8> {
    let (ds, _) = generate_synthetic(spec).unwrap();
    let mut out = Vec::new();
    write_dataset(&ds, &mut out).unwrap();
    out
}

#[test]
fn label_prevalence_stays_in_band() {
    for seed in [0, 1, 7, 100] {
        let (ds, _) = generate_synthetic(&spec(seed)).unwrap();
        let l = ds.label_space.num_labels as f64;
        for label in 0..ds.label_space.num_labels {
            let freq = ds.bags.iter().filter(|b| b.is_relevant(label)).count() as f64 / ds.len() as f64;
            assert!(
                (0.5 / l..=3.0 / l).contains(&freq),
                "seed {seed} label {label} frequency {freq}"
            );
        }
    }
}

#[test]
fn fixed_seed_gives_identical_bytes() {
    assert_eq!(bytes(&spec(42)), bytes(&spec(42)));
    assert_ne!(bytes(&spec(42)), bytes(&spec(43)));
}

#[test]
fn annotations_follow_the_planted_model() {
    let s = SynthSpec { n_bags: 300, ..spec(9) };
    let (ds, planted) = generate_synthetic(&s).unwrap();
    ds.validate().unwrap();
    assert_eq!(ds.len(), 300);
    for bag in &ds.bags {
        assert_eq!(bag.len(), s.z);
        assert_eq!(bag.dim(), s.d);
        let ann = bag.instance_labels.as_ref().unwrap();
        let mut union = Vec::new();
        for (x, a) in bag.instances().zip(ann) {
            assert_eq!(x[s.d - 1], 1.0);
            assert_eq!(&planted.instance_labels(x), a);
            union.extend_from_slice(a);
        }
        union.sort_unstable();
        union.dedup();
        assert_eq!(union, bag.labels);
    }
}

#[test]
fn generated_file_reloads_unchanged() {
    let s = SynthSpec { n_bags: 50, ..spec(5) };
    let (ds, _) = generate_synthetic(&s).unwrap();
    let mut out = Vec::new();
    write_dataset(&ds, &mut out).unwrap();
    assert_eq!(out.iter().filter(|&&b| b == b'\n').count(), 51);
    assert_eq!(read_dataset(out.as_slice()).unwrap(), ds);
}
