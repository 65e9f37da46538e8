use biharmonic::eigen::Method;
use biharmonic::mesh::DomainKind;
use biharmonic::study::{compare_methods, run_sweep, ConvergenceReport, LevelRow, StudyError, SweepOptions};
use proptest::prelude::*;

fn arb_report() -> impl Strategy<Value = ConvergenceReport> {
    (0usize..4, any::<bool>(), any::<bool>(), 1usize..7, 0usize..6).prop_flat_map(|(d, usual, complete, k, n)| {
        let row = (0usize..12, 1e-4f64..1.0, 1usize..1_000_000, prop::collection::vec(1.0f64..1e6, k))
            .prop_map(|(level, h, dof, lambdas)| LevelRow { level, h, dof, lambdas });
        prop::collection::vec(row, n).prop_map(move |rows| ConvergenceReport {
            domain: DomainKind::ALL[d],
            method: if usual { Method::Usual } else { Method::Modified },
            num_eigs: k,
            rows,
            complete,
            failure: None,
        })
    })
}

proptest! {
    #[test]
    fn csv_round_trip(report in arb_report()) {
        let text = report.to_csv();
        prop_assert_eq!(ConvergenceReport::from_csv(&text).unwrap(), report);
    }
}

#[test]
fn csv_layout_and_parse_errors() {
    let report = ConvergenceReport {
        domain: DomainKind::Slit,
        method: Method::Modified,
        num_eigs: 2,
        rows: vec![
            LevelRow { level: 2, h: 0.25, dof: 45, lambdas: vec![2765.5, 2888.25] },
            LevelRow { level: 3, h: 0.125, dof: 217, lambdas: vec![2539.5, 2706.25] },
        ],
        complete: true,
        failure: None,
    };
    let text = report.to_csv();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# domain=slit method=modified complete=true"));
    assert_eq!(lines.next(), Some("level,h,dof,lambda1,lambda2"));
    assert_eq!(lines.next(), Some("2,0.25,45,2765.5,2888.25"));

    let bad_header = text.replace("lambda2", "mu2");
    assert!(matches!(ConvergenceReport::from_csv(&bad_header), Err(StudyError::Parse { line: 2, .. })));
    let bad_value = text.replace("2539.5", "x");
    assert!(matches!(ConvergenceReport::from_csv(&bad_value), Err(StudyError::Parse { line: 4, .. })));
    assert!(ConvergenceReport::from_csv("level,h,dof\n").is_err());

    let rates = report.rates_csv();
    assert_eq!(rates.lines().next(), Some("h,diff_1,rate_1,diff_2,rate_2"));
    assert_eq!(rates.lines().nth(1), Some("0.25,226,,182,"));
    let md = report.eigen_markdown();
    assert!(md.contains("| 3 | 0.1250 | 217 | 2539.500000 | 2706.250000 |"), "{md}");
}

#[test]
fn square_sweeps_agree_across_methods() {
    let opts = SweepOptions::default();
    let a = run_sweep(DomainKind::UnitSquare, Method::Usual, 3, 4, &opts);
    let b = run_sweep(DomainKind::UnitSquare, Method::Modified, 3, 4, &opts);
    assert!(a.complete && b.complete);
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        assert_eq!(ra.lambdas, rb.lambdas);
    }
    let c = compare_methods(DomainKind::UnitSquare, 2, 4, &opts).unwrap();
    assert!(c.spurious.is_empty());
    assert_eq!(c.modified, c.usual);
}

#[test]
fn lshape_rates_approach_two() {
    let r = run_sweep(DomainKind::LShape, Method::Modified, 6, 6, &SweepOptions::default());
    assert_eq!(r.rows.len(), 5);
    for i in 0..6 {
        for rate in r.last_rates(i) {
            assert!((1.8..=2.2).contains(&rate), "λ{} rate {rate}", i + 1);
        }
    }
}
