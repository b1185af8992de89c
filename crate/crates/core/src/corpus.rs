//! Synthetic hierarchical embedding corpus.
//!
//! Speakers sit far apart on a sphere in a "timbre" subspace; style levels
//! move items by smaller offsets in a separate "style" subspace. Items are
//! therefore grouped by speaker first and by style attribute second.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{graded_combinations, Attribute, AttributeLabels, Gender, Language};
use crate::numerics::rng::{mix, Rng};
use crate::prompt::{orthonormal_columns, render_prompt, KeywordTable, TemplateBank};

/// Perturbation weight of the per-speaker component of a style offset.
const SPEAKER_STYLE_WOBBLE: f64 = 0.25;
/// Number of style directions: one per level of every attribute.
const STYLE_DIRS: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_speakers: usize,
    pub n_items_per_cell: usize,
    pub d_emb: usize,
    pub r_speaker: f64,
    pub r_style: f64,
    pub sigma_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_speakers: 8,
            n_items_per_cell: 6,
            d_emb: 64,
            r_speaker: 10.0,
            r_style: 2.0,
            sigma_noise: 0.3,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_speakers == 0 || self.n_items_per_cell == 0 {
            return Err(Error::config("n_speakers and n_items_per_cell must be positive"));
        }
        if self.d_emb < 8 {
            return Err(Error::config(format!("d_emb {} must be at least 8", self.d_emb)));
        }
        let ordered = self.r_speaker > self.r_style && self.r_style > self.sigma_noise && self.sigma_noise >= 0.0;
        if !ordered || !self.r_speaker.is_finite() {
            return Err(Error::config(format!(
                "scales must satisfy r_speaker > r_style > sigma_noise >= 0, got {} / {} / {}",
                self.r_speaker, self.r_style, self.sigma_noise
            )));
        }
        Ok(())
    }

    pub fn n_items(&self) -> usize {
        self.n_speakers * 81 * self.n_items_per_cell
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusItem {
    pub id: String,
    pub speaker_id: usize,
    pub labels: AttributeLabels,
    pub speaker_emb: Vec<f64>,
    pub style_emb: Vec<f64>,
    pub prompt_text: String,
}

pub fn speaker_gender(speaker: usize) -> Gender {
    Gender::ALL[speaker % 2]
}

pub fn speaker_language(speaker: usize) -> Language {
    Language::ALL[(speaker / 2) % 2]
}

/// Generate with the bundled template bank and keyword table.
pub fn generate_corpus(spec: &SyntheticSpec) -> Result<Vec<CorpusItem>> {
    generate_corpus_with(spec, &TemplateBank::default(), &KeywordTable::default())
}

/// Noise-free layout of a corpus: speaker centroids on the timbre sphere and
/// per-speaker style offsets.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusGeometry {
    pub centroids: Vec<Vec<f64>>,
    /// `offsets[speaker][attribute][level]`, attributes in [`Attribute::ALL`] order.
    pub offsets: Vec<Vec<Vec<Vec<f64>>>>,
}

impl CorpusGeometry {
    pub fn new(spec: &SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let layout = Layout::new(spec);
        let offsets = (0..spec.n_speakers)
            .map(|s| {
                Attribute::ALL
                    .iter()
                    .enumerate()
                    .map(|(a, attr)| (0..attr.n_levels()).map(|l| layout.style_offset(spec, s, a, l)).collect())
                    .collect()
            })
            .collect();
        let mut geometry = Self { centroids: Vec::new(), offsets };
        let max_offset = (0..spec.n_speakers)
            .flat_map(|s| speaker_cells(s).into_iter().map(move |l| (s, l)))
            .map(|(s, labels)| norm(&geometry.cell_offset(s, &labels)))
            .fold(0.0, f64::max);
        geometry.centroids = layout.speaker_centroids(spec, max_offset)?;
        Ok(geometry)
    }

    /// Sum of the per-attribute offsets for a label tuple.
    pub fn cell_offset(&self, speaker: usize, labels: &AttributeLabels) -> Vec<f64> {
        let offs = &self.offsets[speaker];
        let mut v = vec![0.0; offs[0][0].len()];
        for (a, attr) in Attribute::ALL.iter().enumerate() {
            add_into(&mut v, &offs[a][labels.level_index(*attr)]);
        }
        v
    }
}

/// The label tuples a speaker produces: its own gender and language with
/// every graded combination.
pub fn speaker_cells(speaker: usize) -> Vec<AttributeLabels> {
    graded_combinations()
        .into_iter()
        .map(|g| AttributeLabels::from_graded(speaker_gender(speaker), speaker_language(speaker), g))
        .collect()
}

pub fn generate_corpus_with(spec: &SyntheticSpec, bank: &TemplateBank, keywords: &KeywordTable) -> Result<Vec<CorpusItem>> {
    let geometry = CorpusGeometry::new(spec)?;
    let centroids = &geometry.centroids;
    let cell_offset = |s: usize, labels: &AttributeLabels| geometry.cell_offset(s, labels);

    let mut noise = Rng::stream(spec.seed, "corpus-noise");
    let mut items = Vec::with_capacity(spec.n_items());
    for s in 0..spec.n_speakers {
        let cells = speaker_cells(s);
        let mut speaker_base = centroids[s].clone();
        let mut mean_offset = vec![0.0; spec.d_emb];
        for labels in &cells {
            add_into(&mut mean_offset, &cell_offset(s, labels));
        }
        for (b, m) in speaker_base.iter_mut().zip(&mean_offset) {
            *b += m / cells.len() as f64;
        }
        for (c, labels) in cells.iter().enumerate() {
            let mut style_center = centroids[s].clone();
            add_into(&mut style_center, &cell_offset(s, labels));
            for k in 0..spec.n_items_per_cell {
                let style_emb: Vec<f64> = style_center.iter().map(|x| x + spec.sigma_noise * noise.normal()).collect();
                let speaker_emb: Vec<f64> =
                    speaker_base.iter().map(|x| x + 0.5 * spec.sigma_noise * noise.normal()).collect();
                let index = items.len() as u64;
                items.push(CorpusItem {
                    id: format!("s{s:02}-c{c:02}-{k}"),
                    speaker_id: s,
                    labels: *labels,
                    speaker_emb,
                    style_emb,
                    prompt_text: render_prompt(labels, bank, keywords, mix(spec.seed, &[index]))?,
                });
            }
        }
    }
    Ok(items)
}

struct Layout {
    style: Vec<Vec<f64>>,
    timbre: Vec<Vec<f64>>,
}

impl Layout {
    fn new(spec: &SyntheticSpec) -> Self {
        let mut rng = Rng::stream(spec.seed, "corpus-basis");
        if spec.d_emb >= 2 * STYLE_DIRS {
            let mut basis = orthonormal_columns(spec.d_emb, spec.d_emb, &mut rng);
            let timbre = basis.split_off(STYLE_DIRS);
            Self { style: basis, timbre }
        } else {
            // Too few dimensions to keep the subspaces apart.
            let style = (0..STYLE_DIRS)
                .map(|_| {
                    let v = rng.normal_vec(spec.d_emb);
                    scaled(&v, 1.0 / norm(&v))
                })
                .collect();
            let timbre = orthonormal_columns(spec.d_emb, spec.d_emb, &mut rng);
            Self { style, timbre }
        }
    }

    fn style_offset(&self, spec: &SyntheticSpec, speaker: usize, attr: usize, level: usize) -> Vec<f64> {
        let dir = attr_dir_index(attr, level);
        let mut rng = Rng::new(mix(spec.seed, &[0x6f66_6673, speaker as u64, attr as u64, level as u64]));
        let wobble = combine(&self.style, &rng.normal_vec(self.style.len()));
        let wobble = scaled(&wobble, SPEAKER_STYLE_WOBBLE / norm(&wobble));
        let mut v = self.style[dir].clone();
        add_into(&mut v, &wobble);
        scaled(&v, spec.r_style / norm(&v))
    }

    /// Centroids on the timbre sphere, redrawn until every pair is farther
    /// apart than `min_gap`.
    fn speaker_centroids(&self, spec: &SyntheticSpec, min_gap: f64) -> Result<Vec<Vec<f64>>> {
        let mut rng = Rng::stream(spec.seed, "corpus-speakers");
        let mut out: Vec<Vec<f64>> = Vec::with_capacity(spec.n_speakers);
        let mut attempts = 0;
        while out.len() < spec.n_speakers {
            attempts += 1;
            if attempts > 10_000 {
                return Err(Error::config(format!(
                    "cannot place {} speakers at radius {} with separation above {min_gap:.3}",
                    spec.n_speakers, spec.r_speaker
                )));
            }
            let v = combine(&self.timbre, &rng.normal_vec(self.timbre.len()));
            let c = scaled(&v, spec.r_speaker / norm(&v));
            if out.iter().all(|o| distance(o, &c) > min_gap) {
                out.push(c);
            }
        }
        Ok(out)
    }
}

fn attr_dir_index(attr: usize, level: usize) -> usize {
    Attribute::ALL[..attr].iter().map(|a| a.n_levels()).sum::<usize>() + level
}

fn combine(basis: &[Vec<f64>], coef: &[f64]) -> Vec<f64> {
    let mut v = vec![0.0; basis[0].len()];
    for (b, c) in basis.iter().zip(coef) {
        for (x, y) in v.iter_mut().zip(b) {
            *x += c * y;
        }
    }
    v
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

fn scaled(v: &[f64], k: f64) -> Vec<f64> {
    v.iter().map(|x| x * k).collect()
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Hold out `per_cell` seeded items from every (speaker, labels) cell.
/// Returns (train, test).
pub fn split_holdout(items: &[CorpusItem], per_cell: usize, seed: u64) -> Result<(Vec<CorpusItem>, Vec<CorpusItem>)> {
    let mut cells: BTreeMap<(usize, AttributeLabels), Vec<usize>> = BTreeMap::new();
    for (i, item) in items.iter().enumerate() {
        cells.entry((item.speaker_id, item.labels)).or_default().push(i);
    }
    let mut rng = Rng::stream(seed, "holdout");
    let mut held = vec![false; items.len()];
    for ((speaker, _), mut members) in cells {
        if members.len() <= per_cell {
            return Err(Error::invalid(format!(
                "a cell of speaker {speaker} has {} items, cannot hold out {per_cell}",
                members.len()
            )));
        }
        rng.shuffle(&mut members);
        for &i in &members[..per_cell] {
            held[i] = true;
        }
    }
    let (test, train): (Vec<_>, Vec<_>) = items.iter().cloned().zip(held).partition(|(_, h)| *h);
    Ok((train.into_iter().map(|p| p.0).collect(), test.into_iter().map(|p| p.0).collect()))
}

pub fn write_jsonl(path: &Path, items: &[CorpusItem]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<CorpusItem>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut items = Vec::new();
    let mut dim = None;
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item: CorpusItem = serde_json::from_str(&line)
            .map_err(|e| Error::invalid(format!("{}:{}: {e}", path.display(), n + 1)))?;
        let d = *dim.get_or_insert(item.style_emb.len());
        if item.style_emb.len() != d || item.speaker_emb.len() != d {
            return Err(Error::invalid(format!("{}:{}: embedding dimension differs", path.display(), n + 1)));
        }
        items.push(item);
    }
    if items.is_empty() {
        return Err(Error::invalid(format!("{} holds no corpus items", path.display())));
    }
    Ok(items)
}
