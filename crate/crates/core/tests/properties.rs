//! Randomized whole-run properties.

use bondsim::engine::SimTime;
use bondsim::harness::report::render_csv;
use bondsim::harness::run::{collect, execute, prepare, run};
use bondsim::harness::scenario::{FailureAction, FailureSpec};
use bondsim::harness::{Mode, Scenario};
use bondsim::netmodel::{serialization_ns, FrameKind};
use proptest::prelude::*;

const ADJ: [&str; 4] = ["r1-r2", "r2-r3", "r3-r4", "r4-r1"];

fn base(mode: Mode, seed: u64) -> Scenario {
    Scenario {
        name: "prop".into(),
        mode,
        seed,
        duration: SimTime::from_secs(6),
        ..Scenario::default()
    }
}

fn flap() -> impl Strategy<Value = (usize, Option<u8>, u64, u64)> {
    (0..4usize, prop::option::of(0..2u8), 0..5_000_000u64, 50_000..2_000_000u64)
}

fn failures(flaps: &[(usize, Option<u8>, u64, u64)], whole: bool) -> Vec<FailureSpec> {
    let mut out = Vec::new();
    for &(adj, member, at, len) in flaps {
        let target = match (member, whole) {
            (Some(m), false) => format!("{}/{m}", ADJ[adj]),
            _ => ADJ[adj].to_string(),
        };
        out.push(FailureSpec {
            target: target.clone(),
            action: FailureAction::Cut,
            at: SimTime(at),
        });
        out.push(FailureSpec {
            target,
            action: FailureAction::Restore,
            at: SimTime((at + len).min(6_000_000)),
        });
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn member_flaps_keep_order_and_conserve_frames(
        seed in 0..1000u64,
        flaps in prop::collection::vec(flap(), 1..12),
    ) {
        let mut s = base(Mode::Bonded, seed);
        s.failures = failures(&flaps, false);
        let r = run(&s).unwrap();
        prop_assert_eq!(r.violations.ordering, 0);
        prop_assert_eq!(r.violations.duplicate, 0);
        prop_assert_eq!(r.violations.modified, 0);
        for c in &r.conservation {
            prop_assert!(c.balanced(), "{:?}", c);
            prop_assert!(c.consistent(), "{:?}", c);
        }
    }

    #[test]
    fn adjacency_flaps_conserve_frames(
        seed in 0..1000u64,
        single in any::<bool>(),
        flaps in prop::collection::vec(flap(), 1..6),
    ) {
        let mode = if single { Mode::SingleLink } else { Mode::Bonded };
        let mut s = base(mode, seed);
        s.failures = failures(&flaps, true);
        let r = run(&s).unwrap();
        prop_assert_eq!(r.violations.duplicate, 0);
        prop_assert_eq!(r.violations.modified, 0);
        for c in &r.conservation {
            prop_assert!(c.balanced(), "{:?}", c);
            prop_assert!(c.consistent(), "{:?}", c);
        }
        for d in &r.downtime {
            prop_assert_eq!(d.total().as_micros() % d.interval.as_micros(), 0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 4, ..ProptestConfig::default() })]

    #[test]
    fn reports_are_reproducible(seed in any::<u64>(), single in any::<bool>()) {
        let mode = if single { Mode::SingleLink } else { Mode::Bonded };
        let mut s = base(mode, seed);
        s.failures = failures(&[(3, Some(0), 1_000_000, 500_000)], false);
        let a = render_csv(&run(&s).unwrap());
        let b = render_csv(&run(&s).unwrap());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn voice_transit_respects_per_hop_lower_bound(seed in 0..1000u64, single in any::<bool>()) {
        let mode = if single { Mode::SingleLink } else { Mode::Bonded };
        let s = base(mode, seed);
        let mut p = prepare(&s, s.seed).unwrap();
        let flows = execute(&mut p, &s).unwrap();
        let r = collect(&p, &s, &flows);
        prop_assert!(r.conservation_ok());
        // server -> r1 -> r4 -> client1 and back: three links each way.
        let t = &s.topology;
        let per_hop_ns = |speed| serialization_ns(218, speed) + t.propagation_us * 1_000;
        let bound_ns = 2 * per_hop_ns(t.host_speed_bps) + per_hop_ns(t.link_speed_bps);
        let mut seen = 0;
        for c in p.sim.metrics.convs.values().filter(|c| c.kind == Some(FrameKind::Voice)) {
            for &us in &c.transits_us {
                prop_assert!(us * 1_000 >= bound_ns, "{} us < {} ns", us, bound_ns);
                seen += 1;
            }
        }
        prop_assert!(seen > 0);
    }
}
