use loopfloer::acceptance::{run_criterion, CRITERIA};

#[test]
fn acceptance() {
    let mut failed = Vec::new();
    for &(id, _, _) in CRITERIA.iter() {
        let report = run_criterion(id).expect("known criterion");
        println!("{report}");
        if !report.passed {
            failed.push(id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
