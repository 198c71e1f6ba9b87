use std::collections::BTreeMap;

use proptest::prelude::*;

use bwsched::ledger::{movement_time, SlotLedger};
use bwsched::{LinkId, TaskId};

#[derive(Debug, Clone)]
enum Op {
    Reserve { links: Vec<u32>, start_q: u32, dur_q: u32, pct: u32 },
    Release(usize),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => (proptest::collection::vec(1u32..5, 1..4), 0u32..40, 0u32..24, 1u32..=100).prop_map(
            |(mut links, start_q, dur_q, pct)| {
                links.sort();
                links.dedup();
                Op::Reserve { links, start_q, dur_q, pct }
            }
        ),
        2 => (0usize..64).prop_map(Op::Release),
    ]
}

/// Slots overlapping `(start, end)` with positive length, slot k = ((k-1)d, kd].
/// Quarter-second grid keeps the arithmetic exact.
fn covered(start: f64, end: f64, d: f64) -> Vec<u64> {
    (1..=200u64)
        .filter(|&k| {
            let (lo, hi) = ((k - 1) as f64 * d, k as f64 * d);
            start.max(lo) < end.min(hi)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn residual_matches_shadow_model(ops in proptest::collection::vec(op(), 1..40), half in any::<bool>()) {
        let d = if half { 0.5 } else { 1.0 };
        let mut ledger = SlotLedger::new(d).unwrap();
        let mut shadow: BTreeMap<(u32, u64), f64> = BTreeMap::new();
        let mut held = Vec::new();
        for op in ops {
            match op {
                Op::Reserve { links, start_q, dur_q, pct } => {
                    let (start, dur, f) = (start_q as f64 * 0.25, dur_q as f64 * 0.25, pct as f64 / 100.0);
                    let path: Vec<LinkId> = links.iter().map(|&l| LinkId(l)).collect();
                    let slots = covered(start, start + dur, d);
                    let fits = links.iter().all(|&l| slots.iter().all(|&k| {
                        1.0 - shadow.get(&(l, k)).copied().unwrap_or(0.0) + 1e-9 >= f
                    }));
                    let got = ledger.reserve(TaskId(0), &path, start, dur, f);
                    prop_assert_eq!(got.is_ok(), fits);
                    if let Ok(r) = got {
                        for &l in &links {
                            for &k in &slots {
                                *shadow.entry((l, k)).or_default() += f;
                            }
                        }
                        held.push((r, links, slots, f));
                    }
                }
                Op::Release(i) if !held.is_empty() => {
                    let (r, links, slots, f) = held.remove(i % held.len());
                    ledger.release(&r).unwrap();
                    prop_assert!(ledger.release(&r).is_err() || r.is_empty());
                    for &l in &links {
                        for &k in &slots {
                            *shadow.get_mut(&(l, k)).unwrap() -= f;
                        }
                    }
                }
                Op::Release(_) => {}
            }
            for l in 1..5u32 {
                for k in 1..=100u64 {
                    let want = shadow.get(&(l, k)).copied().unwrap_or(0.0);
                    let (res, rsv) = (ledger.residual(LinkId(l), k), ledger.reserved(LinkId(l), k));
                    prop_assert!((rsv - want).abs() < 1e-9);
                    prop_assert!((res + rsv - 1.0).abs() < 1e-9);
                    prop_assert!(res > -1e-9);
                }
            }
        }
        for (r, ..) in held {
            ledger.release(&r).unwrap();
        }
        prop_assert_eq!(ledger, SlotLedger::new(d).unwrap());
    }

    #[test]
    fn earliest_window_matches_linear_scan(
        busy in proptest::collection::vec((0u32..30, 1u32..8, 1u32..=100), 0..8),
        full_q in 1u32..24,
        not_before_q in 0u32..20,
        slack in proptest::option::of(0u32..40),
    ) {
        let mut ledger = SlotLedger::new(1.0).unwrap();
        let path = [LinkId(1), LinkId(2)];
        for (i, (s, len, pct)) in busy.into_iter().enumerate() {
            let link = [LinkId(1 + (i as u32 % 2))];
            let _ = ledger.reserve(TaskId(0), &link, s as f64, len as f64, pct as f64 / 100.0);
        }
        let full = full_q as f64 * 0.25;
        let not_before = not_before_q as f64 * 0.5;
        let deadline = slack.map_or(f64::INFINITY, |x| not_before + x as f64);

        // Candidate starts: not_before, then every later whole second.
        let mut scan = None;
        let mut t = not_before;
        while t <= 80.0 && t <= deadline {
            if let Some(p) = ledger.plan_at(&path, t, full) {
                if p.end <= deadline + 1e-9 {
                    scan = Some(p);
                    break;
                }
            }
            t = t.floor() + 1.0;
        }
        let got = ledger.earliest_window(&path, full, not_before, deadline);
        prop_assert_eq!(got, scan);
        if let Some(w) = got {
            prop_assert!((w.end - w.start - full / w.fraction).abs() < 1e-9);
            let mut probe = ledger.clone();
            prop_assert!(probe.reserve(TaskId(1), &path, w.start, w.end - w.start, w.fraction).is_ok());
        }
    }

    #[test]
    fn lower_share_never_shortens_transfers(mb in 1.0..1e4f64, rate in 1.0..1e3f64, f1 in 0.01..1.0f64, f2 in 0.01..1.0f64) {
        let (lo, hi) = if f1 < f2 { (f1, f2) } else { (f2, f1) };
        prop_assert!(movement_time(mb, rate, lo).unwrap() >= movement_time(mb, rate, hi).unwrap() - 1e-9);
    }
}
