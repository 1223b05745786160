//! Exhaustive agreement between the crossbar engine and an independent
//! integer-state oracle on a small two-class, two-feature problem.

use febim::crossbar::{infer, program, DeviceModel};
use febim::data::Dataset;
use febim::gnbc;
use febim::mapping::{map_model, QuantSpec};

fn toy() -> Dataset {
    let rows = [
        ([0.0, 3.0], 0),
        ([1.0, 4.0], 0),
        ([2.0, 5.0], 0),
        ([1.0, 4.0], 0),
        ([2.0, 0.0], 1),
        ([3.0, 1.0], 1),
        ([4.0, 1.0], 1),
        ([3.0, 2.0], 1),
        ([5.0, 0.0], 1),
    ];
    Dataset::new(
        "toy",
        rows.iter().map(|r| r.0.to_vec()).collect(),
        rows.iter().map(|r| r.1).collect(),
        vec!["a".into(), "b".into()],
        vec!["neg".into(), "pos".into()],
    )
    .unwrap()
}

// Computed offline with a separate float implementation of the pipeline
// (population variance, bin-center densities, two-decade truncation, L = 4).
const PRIOR_STATES: [u32; 2] = [3, 3];
const LIK_STATES: [[[u32; 2]; 4]; 2] = [
    [[3, 0], [3, 3], [0, 3], [0, 3]],
    [[0, 3], [1, 3], [3, 0], [3, 0]],
];
const EXPECTED: [([usize; 2], [u64; 2], usize); 16] = [
    ([0, 0], [6, 6], 0),
    ([0, 1], [7, 6], 0),
    ([0, 2], [9, 3], 0),
    ([0, 3], [9, 3], 0),
    ([1, 0], [6, 9], 1),
    ([1, 1], [7, 9], 1),
    ([1, 2], [9, 6], 0),
    ([1, 3], [9, 6], 0),
    ([2, 0], [3, 9], 1),
    ([2, 1], [4, 9], 1),
    ([2, 2], [6, 6], 0),
    ([2, 3], [6, 6], 0),
    ([3, 0], [3, 9], 1),
    ([3, 1], [4, 9], 1),
    ([3, 2], [6, 6], 0),
    ([3, 3], [6, 6], 0),
];

fn spec() -> QuantSpec {
    QuantSpec::with_bits(2, 2)
}

fn state_current(q: u32) -> f64 {
    0.1 + 0.9 * f64::from(q) / 3.0
}

#[test]
fn mapped_states_match_frozen_tables() {
    let ds = toy();
    let params = gnbc::train(&ds).unwrap();
    let mapped = map_model(&params, &ds, &spec()).unwrap();
    assert!(!mapped.uniform_prior);
    assert_eq!(mapped.prior_states, PRIOR_STATES);
    for (i, feat) in LIK_STATES.iter().enumerate() {
        for (b, col) in feat.iter().enumerate() {
            assert_eq!(mapped.q_states[i][b], col, "feature {i} bin {b}");
        }
    }
}

#[test]
fn crossbar_matches_oracle_for_every_evidence_vector() {
    let ds = toy();
    let params = gnbc::train(&ds).unwrap();
    let mapped = map_model(&params, &ds, &spec()).unwrap();
    let image = program(&mapped);
    assert!(image.has_prior_col);
    assert_eq!(image.cols(), 1 + 2 * 4);
    let dev = DeviceModel::default();

    for (bins, scores, winner) in EXPECTED {
        assert_eq!(mapped.state_scores(&bins), scores, "{bins:?}");
        let trace = infer(&image, &dev, &bins, None).unwrap();
        assert_eq!(trace.winner, winner, "{bins:?}");
        assert_eq!(trace.activated_columns, vec![0, 1 + bins[0], 5 + bins[1]]);
        for c in 0..2 {
            let expected = state_current(PRIOR_STATES[c])
                + state_current(LIK_STATES[0][bins[0]][c])
                + state_current(LIK_STATES[1][bins[1]][c]);
            assert!((trace.row_currents[c] - expected).abs() < 1e-12, "{bins:?} row {c}");
        }
        assert_eq!(trace.ambiguous, scores[0] == scores[1], "{bins:?}");
    }
}

#[test]
fn sample_level_predictions_agree() {
    let ds = toy();
    let params = gnbc::train(&ds).unwrap();
    let mapped = map_model(&params, &ds, &spec()).unwrap();
    let image = program(&mapped);
    for x in &ds.features {
        let bins = febim::mapping::discretize(&mapped.bins, x);
        let trace = infer(&image, &DeviceModel::default(), &bins, None).unwrap();
        assert_eq!(trace.winner, mapped.predict_quantized(x));
    }
}
