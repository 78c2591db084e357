use bagssl_core::gradcheck::{run_suite, FD_TOLERANCE};

#[test]
fn all_layers_and_losses_match_finite_differences() {
    let reports = run_suite(100, 2024, None).unwrap();
    for r in &reports {
        println!("{:<22} {:.3e} (trial {})", r.name, r.max_error, r.worst_trial);
    }
    let failed: Vec<_> = reports.iter().filter(|r| !r.passed(FD_TOLERANCE)).map(|r| r.name).collect();
    assert!(failed.is_empty(), "failed: {failed:?}");
}
