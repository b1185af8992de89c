use std::collections::BTreeMap;

use histyle_core::corpus::{generate_corpus, speaker_cells, CorpusGeometry, SyntheticSpec};
use histyle_core::prompt::{parse_prompt, render_prompt, KeywordTable, PromptEncoder, PromptEncoderConfig, TemplateBank};
use histyle_core::{Attribute, AttributeLabels};
use proptest::prelude::*;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[test]
fn centroid_gaps_exceed_every_style_offset() {
    for spec in [
        SyntheticSpec::default(),
        SyntheticSpec { seed: 3, n_speakers: 12, ..SyntheticSpec::default() },
        SyntheticSpec { seed: 5, d_emb: 16, r_speaker: 12.0, ..SyntheticSpec::default() },
    ] {
        let g = CorpusGeometry::new(&spec).unwrap();
        let mut min_gap = f64::INFINITY;
        for i in 0..spec.n_speakers {
            for j in (i + 1)..spec.n_speakers {
                min_gap = min_gap.min(dist(&g.centroids[i], &g.centroids[j]));
            }
        }
        let mut max_offset: f64 = 0.0;
        for s in 0..spec.n_speakers {
            for labels in speaker_cells(s) {
                let o = g.cell_offset(s, &labels);
                max_offset = max_offset.max(o.iter().map(|x| x * x).sum::<f64>().sqrt());
            }
        }
        assert!(min_gap > max_offset, "seed {}: {min_gap} <= {max_offset}", spec.seed);
    }
}

#[test]
fn noiseless_items_sit_on_the_geometry() {
    let spec = SyntheticSpec { sigma_noise: 0.0, n_speakers: 3, n_items_per_cell: 1, ..SyntheticSpec::default() };
    let g = CorpusGeometry::new(&spec).unwrap();
    for item in generate_corpus(&spec).unwrap() {
        let expected: Vec<f64> = g.centroids[item.speaker_id]
            .iter()
            .zip(g.cell_offset(item.speaker_id, &item.labels))
            .map(|(c, o)| c + o)
            .collect();
        assert!(dist(&item.style_emb, &expected) < 1e-12, "{}", item.id);
    }
}

#[test]
fn every_cell_has_exactly_n_items() {
    let spec = SyntheticSpec { n_speakers: 4, n_items_per_cell: 3, ..SyntheticSpec::default() };
    let items = generate_corpus(&spec).unwrap();
    let mut counts: BTreeMap<(usize, AttributeLabels), usize> = BTreeMap::new();
    for it in &items {
        *counts.entry((it.speaker_id, it.labels)).or_default() += 1;
        assert_eq!(it.style_emb.len(), spec.d_emb);
        assert_eq!(it.speaker_emb.len(), spec.d_emb);
    }
    assert_eq!(counts.len(), 4 * 81);
    assert!(counts.values().all(|&c| c == 3));
}

#[test]
fn encoder_is_injective_over_label_space() {
    let enc = PromptEncoder::new(PromptEncoderConfig::default()).unwrap();
    let all = AttributeLabels::all();
    assert_eq!(all.len(), 324);
    let vecs: Vec<Vec<f64>> = all.iter().map(|l| enc.encode(l).vector).collect();
    let mut min_d = f64::INFINITY;
    for i in 0..vecs.len() {
        let n: f64 = vecs[i].iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-9);
        for j in (i + 1)..vecs.len() {
            min_d = min_d.min(dist(&vecs[i], &vecs[j]));
        }
    }
    assert!(min_d > 1e-3, "closest pair at {min_d}");
}

#[test]
fn every_keyword_level_is_recognised_in_both_languages() {
    let kw = KeywordTable::default();
    let bank = TemplateBank::default();
    for labels in AttributeLabels::all() {
        for seed in 0..3 {
            let text = render_prompt(&labels, &bank, &kw, seed).unwrap();
            let parsed = kw.parse(&text).unwrap();
            for attr in Attribute::ALL {
                assert_eq!(parsed.level_index(attr), labels.level_index(attr), "{attr} in {text:?}");
            }
        }
    }
}

fn label_strategy() -> impl Strategy<Value = AttributeLabels> {
    (0..324usize).prop_map(|i| AttributeLabels::all()[i])
}

proptest! {
    #[test]
    fn encode_parse_render_commutes(labels in label_strategy(), seed in any::<u64>()) {
        let enc = PromptEncoder::new(PromptEncoderConfig::default()).unwrap();
        let text = render_prompt(&labels, &TemplateBank::default(), &KeywordTable::default(), seed).unwrap();
        let parsed = parse_prompt(&text).unwrap();
        prop_assert_eq!(enc.encode(&parsed).vector, enc.encode(&labels).vector);
    }

    #[test]
    fn corpus_is_a_pure_function_of_spec(seed in 0u64..1000) {
        let spec = SyntheticSpec { seed, n_speakers: 2, n_items_per_cell: 1, d_emb: 16, ..SyntheticSpec::default() };
        prop_assert_eq!(generate_corpus(&spec).unwrap(), generate_corpus(&spec).unwrap());
    }
}
