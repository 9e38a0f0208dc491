use dpview::harness::{ExperimentConfig, Protocol, Simulation};
use dpview::obliv::{cache_append, SecureTuple};
use dpview::servers::ScriptedServers;
use dpview::sharing::RingValue;
use dpview::shrink::{sdp_ant_init, sdp_ant_step, AntConfig, FlushConfig};
use dpview::state::ProtocolState;
use proptest::prelude::*;

// Combined word whose draw is +scale * 4.7e-10: zero for every practical purpose,
// and non-negative so integer comparisons with the threshold stay exact.
const ZERO: (RingValue, RingValue) = (RingValue(0x7FFF_FFFF), RingValue(0));

fn zero_servers() -> ScriptedServers {
    ScriptedServers::new(std::iter::repeat_n(ZERO, 20_000))
}

proptest! {
    #[test]
    fn ant_fires_exactly_when_count_reaches_theta(
        theta in 1u32..20,
        increments in prop::collection::vec(0u32..6, 1..60),
    ) {
        let cfg = AntConfig::new(theta as f64, 1.0, 1, FlushConfig { interval: 0, size: 0 }).unwrap();
        let mut state = ProtocolState::new(0, zero_servers()).unwrap();
        let mut ant = sdp_ant_init(&cfg, &mut state).unwrap();
        let mut expected = Vec::new();
        let mut acc = 0;
        let mut fired = Vec::new();
        for (i, inc) in increments.iter().enumerate() {
            let t = i as u64 + 1;
            acc += inc;
            if acc >= theta {
                expected.push((t, acc));
                acc = 0;
            }
            let batch: Vec<SecureTuple> = (0..*inc)
                .map(|_| {
                    let s = state.seqs.next_seq();
                    SecureTuple::real(1, vec![], s, t, vec![s])
                })
                .collect();
            cache_append(&mut state.cache, batch);
            let c = state.counter_value() + inc;
            state.reshare_counter(c).unwrap();
            if let Some(out) = sdp_ant_step(t, &cfg, &mut ant, &mut state).unwrap() {
                prop_assert_eq!(state.counter_value(), 0);
                prop_assert_eq!(out.size, out.count as usize);
                fired.push((t, out.count));
            }
        }
        prop_assert_eq!(fired, expected);
    }

    #[test]
    fn bookkeeping_over_a_run(seed in 0u64..1000, ant: bool, flush_interval in prop::sample::select(vec![0u64, 7, 25])) {
        let cfg = ExperimentConfig {
            protocol: if ant { Protocol::DpAnt } else { Protocol::DpTimer },
            horizon: 50,
            interval: 4,
            theta: 6.0,
            flush_interval,
            flush_size: 3,
            seed,
            ..Default::default()
        };
        let mut sim = Simulation::seeded(&cfg).unwrap();
        let mut last_view = 0;
        let mut counter = 0u64;
        while let Some(t) = sim.step().unwrap() {
            let st = sim.state();
            let produced: u64 = sim.produced().iter().sum();
            // real-count conservation
            prop_assert_eq!(
                st.view.real_count() as u64 + st.cache.real_count() as u64 + st.recycled_real,
                produced
            );
            // counter: reals added since the last sync or flush
            let reset = sim.syncs().last().is_some_and(|s| s.t == t) || sim.flushes().last().is_some_and(|f| f.t == t);
            counter = if reset { 0 } else { counter + sim.produced()[t as usize] };
            prop_assert_eq!(st.counter_value() as u64, counter);
            prop_assert!(st.view.len() >= last_view);
            last_view = st.view.len();
        }
    }
}
