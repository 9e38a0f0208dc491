use dpview::leakage::{
    composition_bound, empirical_privacy_loss, m_ant, m_timer, nant, quantize, AntOracle, AntOutputScale,
    EstimatorConfig, LogicalStream, NantConfig, TimerOracle,
};

fn neighbors() -> (LogicalStream, LogicalStream) {
    let a = LogicalStream::from_counts(&[0, 2, 1, 0, 1, 0]);
    let id = a.records().find(|(t, _)| *t == 1).unwrap().1.id;
    let b = a.without_record(id);
    (a, b)
}

fn est() -> EstimatorConfig {
    EstimatorConfig { trials: 100_000, min_bin: 100, seed: 42 }
}

fn timer_loss(eps: f64) {
    let (a, b) = neighbors();
    let cfg = TimerOracle { interval: 3, b: 1.0, epsilon: eps, flush_interval: 0 };
    let loss = empirical_privacy_loss(|s, seed| quantize(&m_timer(s, &cfg, seed)), &a, &b, &est()).unwrap();
    assert!(loss.epsilon <= eps * 1.15, "eps {eps}: {loss:?}");
    assert!(loss.bins_used > 5, "{loss:?}");
}

#[test]
fn timer_loss_within_epsilon_half() {
    timer_loss(0.5);
}

#[test]
fn timer_loss_within_epsilon_one() {
    timer_loss(1.0);
}

fn ant_loss(eps: f64) {
    let (a, b) = neighbors();
    let cfg = AntOracle { theta: 2.0, b: 1.0, epsilon: eps, output: AntOutputScale::Proof, flush_interval: 0 };
    let loss = empirical_privacy_loss(|s, seed| quantize(&m_ant(s, &cfg, seed)), &a, &b, &est()).unwrap();
    assert!(loss.epsilon <= eps * 1.15, "eps {eps}: {loss:?}");
    assert!(loss.bins_used > 5, "{loss:?}");
}

#[test]
fn ant_loss_within_epsilon_half() {
    ant_loss(0.5);
}

#[test]
fn ant_loss_within_epsilon_one() {
    ant_loss(1.0);
}

#[test]
fn nant_loss_within_epsilon() {
    let (a, b) = neighbors();
    for eps in [0.5, 1.0] {
        let cfg = NantConfig { epsilon: eps, theta: 2.0, delta_f: 1.0 };
        let mech = |s: &LogicalStream, seed| quantize(&nant(s, &cfg, seed).into_iter().collect::<Vec<_>>());
        let loss = empirical_privacy_loss(mech, &a, &b, &est()).unwrap();
        assert!(loss.epsilon <= eps * 1.15, "eps {eps}: {loss:?}");
        assert!(loss.bins_used > 5, "{loss:?}");
    }
}

#[test]
fn two_phase_composition() {
    let a = LogicalStream::from_counts(&[0, 1, 1]);
    let id = a.records().next().unwrap().1.id;
    let b = a.without_record(id);
    let phases = [(1u64, 0.5), (2u64, 0.25)];
    let mech = |s: &LogicalStream, seed: u64| {
        let mut out = Vec::new();
        for (i, (q, eps)) in phases.iter().enumerate() {
            let cfg = TimerOracle { interval: 2, b: 1.0, epsilon: *eps, flush_interval: 0 };
            out.extend(quantize(&m_timer(&s.replicate(*q), &cfg, seed ^ (i as u64 + 1) << 40)));
        }
        out
    };
    let bound = composition_bound(&[phases.iter().map(|(q, e)| (*q as f64, *e)).collect()]);
    assert_eq!(bound, 1.0);
    // larger bins keep the tail ratios out of the sampling noise
    let cfg = EstimatorConfig { trials: 400_000, min_bin: 1000, seed: 3 };
    let loss = empirical_privacy_loss(mech, &a, &b, &cfg).unwrap();
    assert!(loss.epsilon <= bound * 1.15, "{loss:?}");
    // the phases do add up: more than either phase alone
    assert!(loss.epsilon > 0.5, "{loss:?}");
}
