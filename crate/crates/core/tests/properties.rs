use std::time::Duration;

use ipoxp_core::link::{Fault, LogEvent, RunLimit};
use ipoxp_core::operator::OperatorModel;
use ipoxp_core::packet::build_echo_request;
use ipoxp_core::{LinkSession, SessionConfig, Side, SimTime};
use proptest::prelude::*;

fn strikes_by(s: &LinkSession, side: Side) -> usize {
    s.log().iter().filter(|e| e.side == side && matches!(e.event, LogEvent::Strike { .. })).count()
}

fn sensed_by(s: &LinkSession, side: Side) -> usize {
    let mut n = s.arduino(side).rx_pending();
    for e in s.log().iter().filter(|e| e.side == side) {
        match e.event {
            LogEvent::Byte { .. } => n += 8,
            LogEvent::RxResync { discarded } => n += discarded as usize,
            _ => {}
        }
    }
    n
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn perfect_operators_make_a_lossless_channel(payload in proptest::collection::vec(any::<u8>(), 0..80)) {
        let config = SessionConfig::default();
        let mut s = LinkSession::new(config.clone()).unwrap();
        s.schedule_ping(SimTime::ZERO, Side::A, 3, 4, payload.clone()).unwrap();
        let stats = s.run(RunLimit::Quiescence).unwrap();
        let request = build_echo_request(config.host_a.address, config.host_b.address, 3, 4, &payload, 64).unwrap();
        prop_assert_eq!(&s.deliveries()[0].1, &request);
        prop_assert_eq!(stats.pings_completed, 1);
        prop_assert_eq!(stats.strike_classes.correct, stats.symbols_sent);
    }

    #[test]
    fn symbols_are_paced_without_drift(period_ms in 1u64..5000, size in 0usize..40) {
        let period = Duration::from_millis(period_ms);
        let mut s = LinkSession::new(SessionConfig { symbol_period: period, ..Default::default() }).unwrap();
        s.schedule_ping(SimTime::ZERO, Side::A, 1, 0, vec![0x5a; size]).unwrap();
        s.run(RunLimit::Quiescence).unwrap();
        for side in [Side::A, Side::B] {
            let lit: Vec<SimTime> = s
                .log()
                .iter()
                .filter(|e| e.side == side && matches!(e.event, LogEvent::Light { .. }))
                .map(|e| e.t)
                .collect();
            let first = lit[0];
            for (i, t) in lit.iter().enumerate() {
                prop_assert_eq!(*t, first + period * i as u32);
            }
        }
    }

    #[test]
    fn the_channel_conserves_strikes(
        seed in any::<u64>(),
        p_miss in 0.0f64..0.1,
        p_wrong in 0.0f64..0.1,
        p_spurious in 0.0f64..0.1,
    ) {
        let noisy = OperatorModel { reaction_jitter: Duration::from_millis(400), ..OperatorModel::noisy(p_miss, p_wrong, p_spurious) };
        let config = SessionConfig { seed, operator_a: noisy.clone(), operator_b: noisy, ..Default::default() };
        let mut s = LinkSession::new(config).unwrap();
        s.schedule_ping(SimTime::ZERO, Side::A, 1, 0, vec![1; 12]).unwrap();
        let stats = s.run(RunLimit::Quiescence).unwrap();
        prop_assert_eq!(strikes_by(&s, Side::A), sensed_by(&s, Side::B));
        prop_assert_eq!(strikes_by(&s, Side::B), sensed_by(&s, Side::A));
        let classes = &stats.strike_classes;
        prop_assert_eq!(classes.correct + classes.wrong_key + classes.missed, stats.symbols_sent);
    }

    #[test]
    fn faults_one_way_leave_the_other_way_alone(index in 0u64..464) {
        let run = |fault: Option<Fault>| {
            let mut s = LinkSession::new(SessionConfig::default()).unwrap();
            s.schedule_ping(SimTime::ZERO, Side::B, 2, 0, vec![9; 28]).unwrap();
            if let Some(f) = fault {
                s.add_fault(f);
            }
            s.run(RunLimit::Quiescence).unwrap();
            s.log()
                .iter()
                .filter(|e| e.side == Side::B && matches!(e.event, LogEvent::Light { .. } | LogEvent::Strike { .. }))
                .map(|e| e.t)
                .collect::<Vec<_>>()
        };
        prop_assert_eq!(run(None), run(Some(Fault::DropStrike { operator: Side::A, index })));
    }

    #[test]
    fn annotations_precede_delivery(size in 0usize..60) {
        let mut s = LinkSession::new(SessionConfig::default()).unwrap();
        s.schedule_ping(SimTime::ZERO, Side::A, 1, 0, vec![0xdb; size]).unwrap();
        s.run(RunLimit::Quiescence).unwrap();
        for side in [Side::A, Side::B] {
            let events: Vec<&LogEvent> = s.log().iter().filter(|e| e.side == side).map(|e| &e.event).collect();
            let delivered = events.iter().position(|e| matches!(e, LogEvent::Packet { .. })).unwrap();
            let annotated: Vec<usize> = events
                .iter()
                .enumerate()
                .filter(|(_, e)| matches!(e, LogEvent::Annotation { .. }))
                .map(|(i, _)| i)
                .collect();
            prop_assert!(!annotated.is_empty());
            prop_assert!(annotated.iter().all(|&i| i < delivered));
        }
    }
}
