use std::collections::BTreeMap;

use histyle_core::annotation::{
    adjust_thresholds, agreement, classify, compute_group_stats, extract_f0_with, init_thresholds, pitch_stats,
    run_adjustment_loop, sample_borderline, speech_rate, synthetic_values, vote_probabilities, volume, AdjustConfig,
    AnnotationRound, AnnotationSession, F0Config, GroupStats, LoopConfig, PerceptualBoundary, RoundStatus, Sampled,
    SamplingConfig, SessionEvent, Side, SimAnnotator, SimAnnotatorConfig, ThresholdTable, Vote,
};
use histyle_core::numerics::Rng;
use histyle_core::{Attribute, Level};
use proptest::prelude::*;

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

#[test]
fn speech_rate_table_boundaries() {
    let stats = [
        GroupStats { attribute: Attribute::Speed, group: "zh".into(), mean: 14.63, std: 4.94, n: 100 },
        GroupStats { attribute: Attribute::Speed, group: "en".into(), mean: 18.25, std: 7.70, n: 100 },
    ];
    let t = init_thresholds(&stats).unwrap();
    let zh = t.entry(Attribute::Speed, "zh").unwrap();
    let en = t.entry(Attribute::Speed, "en").unwrap();
    assert_eq!((round2(zh.low), round2(zh.high)), (9.69, 19.57));
    assert_eq!((round2(en.low), round2(en.high)), (10.55, 25.95));
    assert_eq!(classify(20.0, Attribute::Speed, "zh", &t).unwrap(), Level::High);
    assert_eq!(classify(20.0, Attribute::Speed, "en", &t).unwrap(), Level::Medium);
}

#[test]
fn group_stats_match_brute_force() {
    let records = synthetic_values(400, 3);
    for attr in Attribute::GRADED {
        let stats = compute_group_stats(&records, attr).unwrap();
        let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in &records {
            groups.entry(r.group(attr).unwrap()).or_default().push(r.value(attr).unwrap());
        }
        assert_eq!(stats.len(), groups.len());
        for s in stats {
            let v = &groups[&s.group];
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
            assert_eq!(s.n, v.len());
            assert!((s.mean - mean).abs() < 1e-12 && (s.std - var.sqrt()).abs() < 1e-12, "{attr} {}", s.group);
        }
    }
}

fn random_round(seed: u64, n_annotators: usize) -> (ThresholdTable, AnnotationRound) {
    let records = synthetic_values(600, seed);
    let table = ThresholdTable::from_records(&records, &Attribute::GRADED).unwrap();
    let cfg = SamplingConfig { margin: 0.15, n_per_attribute: 30, ..SamplingConfig::default() };
    let Sampled::Round(mut round) = sample_borderline(&records, &table, &cfg, 1, seed).unwrap() else {
        panic!("no borderline items");
    };
    let mut rng = Rng::new(seed ^ 0x5eed);
    for a in 0..n_annotators {
        for it in &round.items {
            // Some items skipped so tallies see uneven vote counts.
            if rng.uniform() < 0.1 {
                continue;
            }
            round.votes.push(Vote {
                annotator: format!("a{a}"),
                item_id: it.item_id.clone(),
                attribute: it.attribute,
                level: Level::ALL[rng.below(3)],
            });
        }
    }
    (table, round)
}

#[test]
fn agreement_tallies_match_brute_force() {
    for seed in 0..5 {
        let (table, round) = random_round(seed, 4);
        let report = agreement(&round, &table).unwrap();

        let agreeing = round
            .votes
            .iter()
            .filter(|v| round.item(&v.item_id, v.attribute).unwrap().threshold_label == v.level)
            .count();
        assert_eq!(report.n_votes, round.votes.len());
        assert_eq!(report.n_agreeing, agreeing);
        assert_eq!(report.agreement, agreeing as f64 / round.votes.len() as f64);

        for b in &report.boundaries {
            let (lower, upper) = b.side.levels();
            let (mut items, mut votes, mut disagreeing) = (0, 0, 0);
            for it in round.items.iter().filter(|it| {
                it.attribute == b.attribute
                    && it.group == b.group
                    && (it.value - b.boundary).abs() <= round.margin * b.boundary.abs()
                    && (it.threshold_label == lower || it.threshold_label == upper)
            }) {
                items += 1;
                let other = if it.threshold_label == lower { upper } else { lower };
                for v in round.votes.iter().filter(|v| v.item_id == it.item_id && v.attribute == it.attribute) {
                    votes += 1;
                    if v.level == other {
                        disagreeing += 1;
                    }
                }
            }
            assert_eq!((b.window_items, b.votes, b.disagreeing), (items, votes, disagreeing), "{b:?}");
            assert_eq!(b.below.items + b.above.items, items);
        }
    }
}

#[test]
fn white_noise_is_mostly_unvoiced() {
    let sr = 16_000;
    let mut rng = Rng::new(1);
    let samples: Vec<f64> = (0..sr).map(|_| 0.3 * rng.normal()).collect();
    let f0 = extract_f0_with(&samples, sr as u32, &F0Config::default()).unwrap();
    let unvoiced = f0.iter().filter(|&&v| v == 0.0).count() as f64 / f0.len() as f64;
    assert!(unvoiced >= 0.9, "{unvoiced}");
}

#[test]
fn sine_and_harmonic_pitch() {
    let sr = 16_000u32;
    let tone = |f: f64, harmonics: &[f64]| -> Vec<f64> {
        (0..sr)
            .map(|i| {
                let t = f64::from(i) / f64::from(sr);
                harmonics
                    .iter()
                    .enumerate()
                    .map(|(k, a)| a * (2.0 * std::f64::consts::PI * f * (k + 1) as f64 * t).sin())
                    .sum::<f64>()
            })
            .collect()
    };
    for (f, h) in [(220.0, vec![0.5]), (130.0, vec![0.4, 0.3, 0.2]), (180.0, vec![0.2, 0.5])] {
        let f0 = extract_f0_with(&tone(f, &h), sr, &F0Config::default()).unwrap();
        let (mean, std) = pitch_stats(&f0).unwrap();
        assert!((mean - f).abs() <= 3.0, "{f} Hz read as {mean}");
        assert!(std < 2.0, "{f} Hz std {std}");
    }
    assert!(volume(&vec![1.0; 1000]).unwrap().abs() < 1e-12);
    assert!((volume(&vec![-0.5; 1000]).unwrap() - 20.0 * 0.5f64.log10()).abs() < 1e-12);
}

fn boundary(low: f64, high: f64, noise: f64) -> PerceptualBoundary {
    PerceptualBoundary { attribute: Attribute::Pitch, group: "male".into(), low, high, noise }
}

#[test]
fn logistic_tail_and_midpoint() {
    let b = boundary(100.0, 150.0, 2.0);
    let at = vote_probabilities(&b, 150.0);
    assert!((at[2] - 0.5).abs() < 1e-12 && (at[1] - 0.5).abs() < 1e-9);
    let tail = vote_probabilities(&b, 156.0);
    assert!((tail[2] - 1.0 / (1.0 + (-3.0f64).exp())).abs() < 1e-12);
    let far = vote_probabilities(&b, 125.0);
    assert!(far[1] > 1.0 - 1e-5);
}

#[test]
fn simulated_votes_split_evenly_at_the_boundary() {
    let cfg = SimAnnotatorConfig { boundaries: vec![boundary(100.0, 150.0, 1.0)], seed: 4 };
    let sim = SimAnnotator::new(cfg, 1);
    let n = 20_000;
    let highs = (0..n)
        .filter(|i| sim.vote("sim-0", 1, &format!("x{i}"), Attribute::Pitch, "male", 150.0).unwrap() == Level::High)
        .count();
    let frac = highs as f64 / n as f64;
    let se = (0.25 / n as f64).sqrt();
    assert!((frac - 0.5).abs() < 3.0 * se, "{frac}");
}

fn pitch_loop(offset: f64, seed: u64) -> (f64, histyle_core::annotation::LoopOutcome) {
    let records = synthetic_values(1600, seed);
    let cfg = LoopConfig {
        sampling: SamplingConfig { attributes: vec![Attribute::Pitch], ..SamplingConfig::default() },
        seed,
        ..LoopConfig::default()
    };
    let table = ThresholdTable::from_records(&records, &[Attribute::Pitch]).unwrap();
    let sim_cfg = SimAnnotatorConfig::offset_from(&table, offset, 0.05, seed + 100);
    let mut sim = SimAnnotator::new(sim_cfg.clone(), 3);
    let out = run_adjustment_loop(&records, &table, &mut sim, &cfg).unwrap();
    let mut worst: f64 = 0.0;
    for e in &out.table.entries {
        let pb = sim_cfg.boundary(e.attribute, &e.group).unwrap();
        worst = worst.max((e.low - pb.low).abs() / e.std).max((e.high - pb.high).abs() / e.std);
    }
    (worst, out)
}

#[test]
fn loop_tracks_listeners_in_both_directions() {
    for (offset, seed) in [(0.3, 1), (-0.3, 2), (0.2, 3)] {
        let (worst, out) = pitch_loop(offset, seed);
        assert!(out.converged(), "offset {offset}: {:?}", out.status);
        assert!(out.rounds.len() <= 3);
        assert!(worst <= 0.15, "offset {offset}: {worst}");
        assert!(out.rounds.last().unwrap().report.agreement >= 0.85);
    }
}

proptest! {
    #[test]
    fn classification_partitions_the_line(low in -100.0f64..100.0, width in 0.01f64..50.0, v in -200.0f64..200.0) {
        let stats = [GroupStats { attribute: Attribute::Volume, group: "global".into(), mean: low + width / 2.0, std: width / 2.0, n: 2 }];
        let t = init_thresholds(&stats).unwrap();
        let e = &t.entries[0];
        let level = classify(v, Attribute::Volume, "global", &t).unwrap();
        let expected = if v < e.low { Level::Low } else if v > e.high { Level::High } else { Level::Medium };
        prop_assert_eq!(level, expected);
        prop_assert_eq!(classify(e.low, Attribute::Volume, "global", &t).unwrap(), Level::Medium);
        prop_assert_eq!(classify(e.high, Attribute::Volume, "global", &t).unwrap(), Level::Medium);
    }

    #[test]
    fn adjusted_boundaries_stay_ordered_and_capped(seed in 0u64..500, step in 0.05f64..3.0) {
        let (table, round) = random_round(seed, 3);
        let report = agreement(&round, &table).unwrap();
        let cfg = AdjustConfig { step_fraction: step, trigger: 0.5 };
        let out = adjust_thresholds(&table, &report, &cfg).unwrap();
        prop_assert!(out.validate().is_ok());
        for (a, b) in table.entries.iter().zip(&out.entries) {
            prop_assert!(b.low < b.high);
            for side in [Side::Low, Side::High] {
                prop_assert!((a.boundary(side) - b.boundary(side)).abs() <= step * a.std + 1e-9);
            }
        }
    }

    #[test]
    fn zero_frames_do_not_change_pitch_stats(
        voiced in prop::collection::vec(60.0f64..400.0, 2..40),
        zeros in prop::collection::vec(0usize..40, 0..20),
    ) {
        let mut f0 = voiced.clone();
        for z in zeros {
            f0.insert(z.min(f0.len()), 0.0);
        }
        let (m0, s0) = pitch_stats(&voiced).unwrap();
        let (m1, s1) = pitch_stats(&f0).unwrap();
        prop_assert_eq!(m0, m1);
        prop_assert_eq!(s0, s1);
    }

    #[test]
    fn speech_rate_is_homogeneous(n in 1u32..500, d in 0.1f64..30.0, k in 1u32..8) {
        let a = speech_rate(n, d).unwrap();
        let b = speech_rate(n * k, d * f64::from(k)).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs());
    }

    #[test]
    fn replaying_events_rebuilds_the_session(seed in 0u64..200, steps in prop::collection::vec((0usize..3, 0usize..60, 0usize..3), 1..120)) {
        let records = synthetic_values(300, seed);
        let table = ThresholdTable::from_records(&records, &Attribute::GRADED).unwrap();
        let cfg = LoopConfig { sampling: SamplingConfig { n_per_attribute: 5, ..SamplingConfig::default() }, seed, ..LoopConfig::default() };
        let roster = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let mut s = AnnotationSession::new(records.clone(), table.clone(), cfg.clone(), roster.clone()).unwrap();
        s.start().unwrap();
        for (annotator, item, level) in steps {
            let Some(round) = s.current_round() else { break };
            if item >= 55 {
                let _ = s.advance(item % 2 == 0);
                continue;
            }
            let it = &round.items[item % round.items.len()];
            let vote = Vote { annotator: roster[annotator].clone(), item_id: it.item_id.clone(), attribute: it.attribute, level: Level::ALL[level] };
            s.record_vote(vote).unwrap();
        }
        let events: Vec<SessionEvent> = s.events().to_vec();
        let replayed = AnnotationSession::replay(records, table, cfg, roster, &events).unwrap();
        prop_assert_eq!(&replayed, &s);
        if let Some(r) = s.current_round() {
            prop_assert_eq!(r.status, RoundStatus::Open);
        }
    }
}
