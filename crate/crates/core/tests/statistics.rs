//! Statistical routines against values frozen from an independent reference
//! implementation (SciPy 1.15, `scipy.stats.wilcoxon` and `scipy.stats.bartlett`,
//! called with float arrays).

use pimp_gp::analysis::{bartlett, wilcoxon_signed_rank, PairedSample};

#[test]
fn wilcoxon_textbook_pairs() {
    // Hollander & Wolfe depression-scale data, first vs second visit.
    let x = [1.83, 0.50, 1.62, 2.48, 1.68, 1.88, 1.55, 3.06, 1.30];
    let y = [0.878, 0.647, 0.598, 2.05, 1.06, 1.29, 1.06, 3.14, 1.29];
    let r = wilcoxon_signed_rank(&PairedSample::new("x", "y", x.into_iter().zip(y).collect())).unwrap();
    assert!(r.exact);
    assert_eq!(r.statistic, 5.0);
    assert_eq!(r.w_plus, 40.0);
    assert!((r.p_value - 0.0390625).abs() < 1e-12);
    assert!(r.significant);
}

#[test]
fn wilcoxon_large_sample_with_ties_and_zeros() {
    let d = [
        -0.5, -1.0, 0.1, 0.7, 1.4, 0.4, -0.3, -0.5, 1.0, 1.9, 0.6, -0.9, -0.7, 1.9, 0.5, -1.4, 0.2, -0.9, -0.3, -0.2,
        -0.4, 0.9, 0.2, -0.3, 0.7, 1.1, -1.3, 0.0, -0.7, 0.1, -1.0, 0.3, 0.3, -0.0, -0.7, -0.1, -0.8, -1.1, 0.5, -0.8,
    ];
    let r = wilcoxon_signed_rank(&PairedSample::new("a", "b", d.iter().map(|v| (*v, 0.0)).collect())).unwrap();
    assert!(!r.exact);
    assert_eq!(r.n, 38);
    assert_eq!(r.statistic, 335.5);
    assert!((r.p_value - 0.6165146230825531).abs() < 1e-9, "{}", r.p_value);
    assert!(!r.significant);
}

#[test]
fn bartlett_reference_values() {
    let r = bartlett(&[vec![1.0, 2.0, 3.0], vec![10.0, 20.0, 30.0]]).unwrap();
    assert!((r.statistic - 5.182042378519259).abs() < 1e-9);
    assert!((r.p_value - 0.022821483153810808).abs() < 1e-9);
    let r = bartlett(&[vec![1.0, 2.0, 3.0, 4.0], vec![2.0, 4.0, 6.0, 9.0], vec![5.0, 5.5, 7.0, 3.0]]).unwrap();
    assert!((r.statistic - 2.005479897980228).abs() < 1e-9);
    assert!((r.p_value - 0.36687284990222024).abs() < 1e-9);
}
