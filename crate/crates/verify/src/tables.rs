//! Hand-worked outcome tables with their expected metrics.
//!
//! Every rate is written as the exact fraction `(numerator, denominator)`
//! behind the percentage; `fp_overall` is already a percentage.

use hep2_core::eval::OutcomeRecord;
use hep2_core::IntensityTag;

/// `[tp, fp, ctp, atp, first_otp, otp, first_ofp, ofp]`.
pub type ClassRow = [(u32, u32); 8];

pub struct HandTable {
    pub name: &'static str,
    pub n_classes: usize,
    pub records: Vec<OutcomeRecord>,
    pub per_class: Vec<Option<ClassRow>>,
    pub macro_f: (u32, u32),
    pub fp_overall: (u32, u32),
}

fn rec(truth: usize, accepted: &[usize], survivors: &[usize], assigned: Option<usize>) -> OutcomeRecord {
    OutcomeRecord {
        truth,
        accepted: accepted.to_vec(),
        survivors: survivors.to_vec(),
        assigned,
        tag: IntensityTag::Positive,
    }
}

fn one(truth: usize, assigned: usize) -> OutcomeRecord {
    rec(truth, &[assigned], &[assigned], Some(assigned))
}

pub fn hand_tables() -> Vec<HandTable> {
    vec![
        HandTable {
            name: "perfect single stage",
            n_classes: 3,
            records: vec![one(0, 0), one(0, 0), one(1, 1), one(1, 1), one(2, 2), one(2, 2)],
            per_class: vec![
                Some([(2, 2), (0, 4), (2, 2), (0, 2), (2, 2), (2, 2), (0, 4), (0, 4)]),
                Some([(2, 2), (0, 4), (2, 2), (0, 2), (2, 2), (2, 2), (0, 4), (0, 4)]),
                Some([(2, 2), (0, 4), (2, 2), (0, 2), (2, 2), (2, 2), (0, 4), (0, 4)]),
            ],
            macro_f: (1, 1),
            fp_overall: (0, 1),
        },
        HandTable {
            name: "one confusion",
            n_classes: 3,
            records: vec![one(0, 0), one(0, 1), one(1, 1), one(1, 1), one(2, 2), one(2, 2)],
            per_class: vec![
                Some([(1, 2), (0, 4), (1, 2), (0, 2), (1, 2), (1, 2), (0, 4), (0, 4)]),
                Some([(2, 2), (1, 4), (2, 2), (0, 2), (2, 2), (2, 2), (1, 4), (1, 4)]),
                Some([(2, 2), (0, 4), (2, 2), (0, 2), (2, 2), (2, 2), (0, 4), (0, 4)]),
            ],
            macro_f: (37, 45),
            fp_overall: (25, 3),
        },
        HandTable {
            name: "ambiguities resolved, one rejection",
            n_classes: 3,
            records: vec![
                rec(0, &[0, 1], &[0, 1], Some(0)),
                one(0, 0),
                one(1, 1),
                rec(1, &[0, 1], &[0, 1], Some(1)),
                one(2, 2),
                rec(2, &[], &[], None),
            ],
            per_class: vec![
                Some([(2, 2), (0, 4), (1, 2), (1, 2), (2, 2), (2, 2), (1, 4), (0, 4)]),
                Some([(2, 2), (0, 4), (1, 2), (1, 2), (2, 2), (2, 2), (1, 4), (0, 4)]),
                Some([(1, 2), (0, 4), (1, 2), (0, 2), (1, 2), (1, 2), (0, 4), (0, 4)]),
            ],
            macro_f: (8, 9),
            fp_overall: (0, 1),
        },
        HandTable {
            name: "pairwise survivor is wrong",
            n_classes: 3,
            records: vec![rec(0, &[0, 1], &[1], Some(1)), one(0, 0), one(1, 1), one(2, 2)],
            per_class: vec![
                Some([(1, 2), (0, 2), (1, 2), (1, 2), (2, 2), (1, 2), (0, 2), (0, 2)]),
                Some([(1, 1), (1, 3), (1, 1), (0, 1), (1, 1), (1, 1), (1, 3), (1, 3)]),
                Some([(1, 1), (0, 3), (1, 1), (0, 1), (1, 1), (1, 1), (0, 3), (0, 3)]),
            ],
            macro_f: (7, 9),
            fp_overall: (100, 9),
        },
        HandTable {
            name: "absent class and full rejection",
            n_classes: 3,
            records: vec![rec(0, &[], &[], None), one(0, 1), one(1, 1), one(1, 1)],
            per_class: vec![
                Some([(0, 2), (0, 2), (0, 2), (0, 2), (0, 2), (0, 2), (0, 2), (0, 2)]),
                Some([(2, 2), (1, 2), (2, 2), (0, 2), (2, 2), (2, 2), (1, 2), (1, 2)]),
                None,
            ],
            macro_f: (2, 5),
            fp_overall: (50, 3),
        },
        HandTable {
            name: "true class never accepted",
            n_classes: 3,
            records: vec![
                rec(0, &[1, 2], &[1, 2], Some(1)),
                one(1, 1),
                one(2, 2),
                rec(2, &[0, 2], &[0, 2], Some(2)),
            ],
            per_class: vec![
                Some([(0, 1), (0, 3), (0, 1), (0, 1), (0, 1), (0, 1), (1, 3), (0, 3)]),
                Some([(1, 1), (1, 3), (1, 1), (0, 1), (1, 1), (1, 1), (1, 3), (1, 3)]),
                Some([(2, 2), (0, 2), (1, 2), (1, 2), (2, 2), (2, 2), (1, 2), (0, 2)]),
            ],
            macro_f: (5, 9),
            fp_overall: (100, 9),
        },
        HandTable {
            name: "accepted everywhere, resolved wrong",
            n_classes: 3,
            records: vec![rec(0, &[0, 1, 2], &[0, 1, 2], Some(2)), one(1, 1), one(2, 2)],
            per_class: vec![
                Some([(0, 1), (0, 2), (0, 1), (1, 1), (1, 1), (1, 1), (0, 2), (0, 2)]),
                Some([(1, 1), (0, 2), (1, 1), (0, 1), (1, 1), (1, 1), (1, 2), (0, 2)]),
                Some([(1, 1), (1, 2), (1, 1), (0, 1), (1, 1), (1, 1), (1, 2), (1, 2)]),
            ],
            macro_f: (5, 9),
            fp_overall: (50, 3),
        },
        HandTable {
            name: "four classes, one swap",
            n_classes: 4,
            records: vec![one(0, 1), one(1, 0), one(2, 2), one(3, 3)],
            per_class: vec![
                Some([(0, 1), (1, 3), (0, 1), (0, 1), (0, 1), (0, 1), (1, 3), (1, 3)]),
                Some([(0, 1), (1, 3), (0, 1), (0, 1), (0, 1), (0, 1), (1, 3), (1, 3)]),
                Some([(1, 1), (0, 3), (1, 1), (0, 1), (1, 1), (1, 1), (0, 3), (0, 3)]),
                Some([(1, 1), (0, 3), (1, 1), (0, 1), (1, 1), (1, 1), (0, 3), (0, 3)]),
            ],
            macro_f: (1, 2),
            fp_overall: (50, 3),
        },
        HandTable {
            name: "pairwise removes both false accepts",
            n_classes: 3,
            records: vec![
                one(0, 0),
                one(0, 0),
                rec(0, &[0, 2], &[0], Some(0)),
                one(1, 1),
                one(2, 2),
                rec(2, &[0, 2], &[2], Some(2)),
            ],
            per_class: vec![
                Some([(3, 3), (0, 3), (2, 3), (1, 3), (3, 3), (3, 3), (1, 3), (0, 3)]),
                Some([(1, 1), (0, 5), (1, 1), (0, 1), (1, 1), (1, 1), (0, 5), (0, 5)]),
                Some([(2, 2), (0, 4), (1, 2), (1, 2), (2, 2), (2, 2), (1, 4), (0, 4)]),
            ],
            macro_f: (1, 1),
            fp_overall: (0, 1),
        },
        HandTable {
            name: "everything assigned to one class",
            n_classes: 3,
            records: vec![
                rec(0, &[0, 1, 2], &[0, 1, 2], Some(1)),
                rec(1, &[0, 1, 2], &[0, 1, 2], Some(1)),
                rec(2, &[0, 1, 2], &[0, 1, 2], Some(1)),
            ],
            per_class: vec![
                Some([(0, 1), (0, 2), (0, 1), (1, 1), (1, 1), (1, 1), (2, 2), (0, 2)]),
                Some([(1, 1), (2, 2), (0, 1), (1, 1), (1, 1), (1, 1), (2, 2), (2, 2)]),
                Some([(0, 1), (0, 2), (0, 1), (1, 1), (1, 1), (1, 1), (2, 2), (0, 2)]),
            ],
            macro_f: (1, 6),
            fp_overall: (100, 3),
        },
    ]
}
