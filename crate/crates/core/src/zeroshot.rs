//! Zero-shot classification and regression from prompt similarities.
//!
//! Regression embeds one prompt per (phrasing, value) pair, ranks every
//! prompt by cosine similarity to a frame, keeps the top fraction and
//! reports the median of their values. A video's prediction is the mean of
//! its per-frame predictions over the first frames.

use serde::Serialize;
use thiserror::Error;

use crate::embedding::{cosine_similarity, Embedding, EmbeddingError};

pub const PLACEHOLDER: char = 'X';
pub const DEFAULT_MAX_FRAMES: usize = 10;
pub const DEFAULT_TOP_FRACTION: f64 = 0.2;

#[derive(Debug, Error, PartialEq)]
pub enum ZeroShotError {
    #[error("phrasing {0:?} has no value placeholder X")]
    MissingPlaceholder(String),
    #[error("phrasing {0:?} has more than one value placeholder X")]
    DuplicatePlaceholder(String),
    #[error("empty value range [{0}, {1}]")]
    EmptyRange(i64, i64),
    #[error("no phrasings")]
    NoPhrasings,
    #[error("no frames")]
    NoFrames,
    #[error("no prompts")]
    NoPrompts,
    #[error("top fraction must be in (0, 1], got {0}")]
    TopFraction(f64),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prompt {
    pub phrasing: usize,
    pub value: i64,
    pub text: String,
}

/// Materialized prompts, phrasing-major with ascending values.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptGrid {
    pub phrasings: Vec<String>,
    pub lo: i64,
    pub hi: i64,
    pub prompts: Vec<Prompt>,
}

/// Byte offsets of standalone `X` placeholders: an `X` with no letter or
/// digit on either side.
fn placeholder_positions(phrasing: &str) -> Vec<usize> {
    let chars: Vec<(usize, char)> = phrasing.char_indices().collect();
    (0..chars.len())
        .filter(|&i| {
            chars[i].1 == PLACEHOLDER
                && (i == 0 || !chars[i - 1].1.is_alphanumeric())
                && (i + 1 == chars.len() || !chars[i + 1].1.is_alphanumeric())
        })
        .map(|i| chars[i].0)
        .collect()
}

pub fn build_prompt_grid<S: AsRef<str>>(phrasings: &[S], lo: i64, hi: i64) -> Result<PromptGrid, ZeroShotError> {
    if phrasings.is_empty() {
        return Err(ZeroShotError::NoPhrasings);
    }
    if lo > hi {
        return Err(ZeroShotError::EmptyRange(lo, hi));
    }
    let mut prompts = Vec::with_capacity(phrasings.len() * (hi - lo + 1) as usize);
    for (pi, phrasing) in phrasings.iter().enumerate() {
        let phrasing = phrasing.as_ref();
        let pos = match placeholder_positions(phrasing).as_slice() {
            [] => return Err(ZeroShotError::MissingPlaceholder(phrasing.to_string())),
            [p] => *p,
            _ => return Err(ZeroShotError::DuplicatePlaceholder(phrasing.to_string())),
        };
        for value in lo..=hi {
            let text = format!(
                "{}{}{}",
                &phrasing[..pos],
                value,
                &phrasing[pos + PLACEHOLDER.len_utf8()..]
            );
            prompts.push(Prompt {
                phrasing: pi,
                value,
                text,
            });
        }
    }
    Ok(PromptGrid {
        phrasings: phrasings.iter().map(|p| p.as_ref().to_string()).collect(),
        lo,
        hi,
        prompts,
    })
}

impl PromptGrid {
    /// Embeds every prompt with `encode`, keeping grid order.
    pub fn embed<E>(&self, mut encode: impl FnMut(&str) -> Result<Embedding, E>) -> Result<EmbeddedGrid, E> {
        let embeddings = self
            .prompts
            .iter()
            .map(|p| encode(&p.text))
            .collect::<Result<Vec<_>, E>>()?;
        Ok(EmbeddedGrid {
            values: self.prompts.iter().map(|p| p.value).collect(),
            phrasings: self.prompts.iter().map(|p| p.phrasing).collect(),
            embeddings,
            lo: self.lo,
            hi: self.hi,
        })
    }
}

/// Prompt embeddings aligned with their values and phrasing indices.
#[derive(Debug, Clone)]
pub struct EmbeddedGrid {
    pub values: Vec<i64>,
    pub phrasings: Vec<usize>,
    pub embeddings: Vec<Embedding>,
    pub lo: i64,
    pub hi: i64,
}

impl EmbeddedGrid {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// How multiple phrasings combine before top-k selection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum EnsembleMode {
    /// All (phrasing, value) prompts compete in one candidate set.
    #[default]
    Pooled,
    /// Similarities are averaged across phrasings per value first.
    Averaged,
}

/// `ceil(fraction * n)`, at least 1 and at most `n`.
pub fn top_count(fraction: f64, n: usize) -> usize {
    // The epsilon keeps products like 0.2 * 10 from rounding up to 3.
    ((fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n)
}

fn median_of(mut values: Vec<i64>) -> f64 {
    values.sort_unstable();
    let k = values.len();
    if k % 2 == 1 {
        values[k / 2] as f64
    } else {
        (values[k / 2 - 1] + values[k / 2]) as f64 / 2.0
    }
}

/// Median value of the top `top_fraction` of candidates by similarity.
/// Candidates are `(similarity, value, phrasing)`; ties fall back to
/// ascending value, then phrasing.
fn select_median(mut candidates: Vec<(f64, i64, usize)>, top_fraction: f64) -> f64 {
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let k = top_count(top_fraction, candidates.len());
    median_of(candidates[..k].iter().map(|c| c.1).collect())
}

fn check_fraction(top_fraction: f64) -> Result<(), ZeroShotError> {
    if top_fraction > 0.0 && top_fraction <= 1.0 {
        Ok(())
    } else {
        Err(ZeroShotError::TopFraction(top_fraction))
    }
}

pub fn zeroshot_regress_frame(
    frame: &Embedding,
    grid: &EmbeddedGrid,
    top_fraction: f64,
    mode: EnsembleMode,
) -> Result<f64, ZeroShotError> {
    check_fraction(top_fraction)?;
    if grid.is_empty() {
        return Err(ZeroShotError::NoPrompts);
    }
    let mut sims = Vec::with_capacity(grid.len());
    for e in &grid.embeddings {
        sims.push(cosine_similarity(frame, e)? as f64);
    }
    let candidates = match mode {
        EnsembleMode::Pooled => sims
            .iter()
            .zip(grid.values.iter().zip(&grid.phrasings))
            .map(|(&s, (&v, &p))| (s, v, p))
            .collect(),
        EnsembleMode::Averaged => {
            let mut by_value: std::collections::BTreeMap<i64, (f64, usize)> = Default::default();
            for (&s, &v) in sims.iter().zip(&grid.values) {
                let e = by_value.entry(v).or_insert((0.0, 0));
                e.0 += s;
                e.1 += 1;
            }
            by_value
                .into_iter()
                .map(|(v, (sum, n))| (sum / n as f64, v, 0))
                .collect()
        }
    };
    Ok(select_median(candidates, top_fraction))
}

/// A video-level regression with the per-frame predictions behind it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VideoPrediction {
    pub value: f64,
    pub per_frame: Vec<f64>,
}

impl VideoPrediction {
    pub fn frame_min(&self) -> f64 {
        self.per_frame.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn frame_max(&self) -> f64 {
        self.per_frame.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn zeroshot_regress_video(
    frames: &[Embedding],
    grid: &EmbeddedGrid,
    top_fraction: f64,
    mode: EnsembleMode,
    max_frames: usize,
) -> Result<VideoPrediction, ZeroShotError> {
    let used = &frames[..frames.len().min(max_frames.max(1))];
    if used.is_empty() {
        return Err(ZeroShotError::NoFrames);
    }
    let per_frame = used
        .iter()
        .map(|f| zeroshot_regress_frame(f, grid, top_fraction, mode))
        .collect::<Result<Vec<_>, _>>()?;
    let value = per_frame.iter().sum::<f64>() / per_frame.len() as f64;
    Ok(VideoPrediction { value, per_frame })
}

/// Mean over the first `max_frames` frames of the mean prompt similarity.
pub fn zeroshot_classify(frames: &[Embedding], prompts: &[Embedding], max_frames: usize) -> Result<f64, ZeroShotError> {
    let used = &frames[..frames.len().min(max_frames.max(1))];
    if used.is_empty() {
        return Err(ZeroShotError::NoFrames);
    }
    if prompts.is_empty() {
        return Err(ZeroShotError::NoPrompts);
    }
    let mut total = 0.0;
    for f in used {
        let mut s = 0.0;
        for p in prompts {
            s += cosine_similarity(f, p)? as f64;
        }
        total += s / prompts.len() as f64;
    }
    Ok(total / used.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::normalize;
    use crate::rng::seeded;
    use approx::assert_abs_diff_eq;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn unit(v: &[f32]) -> Embedding {
        normalize(v).unwrap()
    }

    fn random_unit(rng: &mut crate::rng::Rng, d: usize) -> Embedding {
        let v: Vec<f32> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        unit(&v)
    }

    /// Grid whose prompt similarity to the frame `e0` is exactly `sims[i]`:
    /// prompt i = sims[i] e0 + sqrt(1 - sims[i]^2) e1.
    fn grid_with_sims(values: &[i64], sims: &[f64]) -> EmbeddedGrid {
        EmbeddedGrid {
            values: values.to_vec(),
            phrasings: vec![0; values.len()],
            embeddings: sims
                .iter()
                .map(|&s| unit(&[s as f32, (1.0 - s * s).max(0.0).sqrt() as f32]))
                .collect(),
            lo: *values.iter().min().unwrap(),
            hi: *values.iter().max().unwrap(),
        }
    }

    #[test]
    fn grid_sizes_and_order() {
        let g = build_prompt_grid(
            &[
                "The left ventricular ejection fraction is estimated to be X%",
                "LV ejection fraction is X%",
            ],
            0,
            100,
        )
        .unwrap();
        assert_eq!(g.prompts.len(), 202);
        assert_eq!(
            g.prompts[0].text,
            "The left ventricular ejection fraction is estimated to be 0%"
        );
        assert_eq!(g.prompts[101].text, "LV ejection fraction is 0%");
        assert_eq!(g.prompts[201].value, 100);
        let one = build_prompt_grid(&["X"], 5, 5).unwrap();
        assert_eq!(one.prompts.len(), 1);
        assert_eq!(one.prompts[0].text, "5");
    }

    #[test]
    fn placeholder_rules() {
        assert!(matches!(
            build_prompt_grid(&["no value here"], 0, 1),
            Err(ZeroShotError::MissingPlaceholder(_))
        ));
        assert!(matches!(
            build_prompt_grid(&["X to X"], 0, 1),
            Err(ZeroShotError::DuplicatePlaceholder(_))
        ));
        // Letters inside words are not placeholders.
        let g = build_prompt_grid(&["Xience stent at X mm"], 1, 1).unwrap();
        assert_eq!(g.prompts[0].text, "Xience stent at 1 mm");
        assert!(matches!(
            build_prompt_grid(&["X"], 3, 2),
            Err(ZeroShotError::EmptyRange(3, 2))
        ));
    }

    #[test]
    fn top_count_is_ceiling() {
        assert_eq!(top_count(0.2, 5), 1);
        assert_eq!(top_count(0.2, 10), 2);
        assert_eq!(top_count(0.2, 101), 21);
        assert_eq!(top_count(0.2, 202), 41);
        assert_eq!(top_count(0.01, 3), 1);
        assert_eq!(top_count(1.0, 7), 7);
    }

    #[test]
    fn single_top_prompt() {
        let g = grid_with_sims(&[10, 20, 30, 40, 50], &[0.1, 0.2, 0.9, 0.3, 0.4]);
        let f = unit(&[1.0, 0.0]);
        assert_eq!(zeroshot_regress_frame(&f, &g, 0.2, EnsembleMode::Pooled).unwrap(), 30.0);
    }

    #[test]
    fn even_k_median() {
        let values: Vec<i64> = (1..=10).map(|v| v * 10).collect();
        let mut sims = vec![0.1; 10];
        sims[3] = 0.9; // 40
        sims[5] = 0.8; // 60
        let g = grid_with_sims(&values, &sims);
        let f = unit(&[1.0, 0.0]);
        assert_eq!(zeroshot_regress_frame(&f, &g, 0.2, EnsembleMode::Pooled).unwrap(), 50.0);
    }

    #[test]
    fn regression_matches_sort_select_median_oracle() {
        let mut rng = seeded(21);
        let d = 8;
        let grid = build_prompt_grid(&["X"], 0, 100).unwrap();
        let prompt_embs: Vec<Embedding> = (0..101).map(|_| random_unit(&mut rng, d)).collect();
        let mut it = prompt_embs.clone().into_iter();
        let eg = grid.embed::<()>(|_| Ok(it.next().unwrap())).unwrap();
        for _ in 0..20 {
            let frame = random_unit(&mut rng, d);
            let mut scored: Vec<(f32, i64)> = prompt_embs
                .iter()
                .enumerate()
                .map(|(v, e)| (cosine_similarity(&frame, e).unwrap(), v as i64))
                .collect();
            scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let mut top: Vec<i64> = scored[..21].iter().map(|s| s.1).collect();
            top.sort();
            let expected = top[10] as f64;
            assert_eq!(
                zeroshot_regress_frame(&frame, &eg, 0.2, EnsembleMode::Pooled).unwrap(),
                expected
            );
        }
    }

    #[test]
    fn permuting_prompts_does_not_change_output() {
        let mut rng = seeded(4);
        let grid = build_prompt_grid(&["a X", "b X"], 0, 30).unwrap();
        let eg = grid.embed::<()>(|_| Ok(random_unit(&mut rng, 6))).unwrap();
        let frame = random_unit(&mut rng, 6);
        let base = zeroshot_regress_frame(&frame, &eg, 0.2, EnsembleMode::Pooled).unwrap();
        let mut order: Vec<usize> = (0..eg.len()).collect();
        order.shuffle(&mut rng);
        let shuffled = EmbeddedGrid {
            values: order.iter().map(|&i| eg.values[i]).collect(),
            phrasings: order.iter().map(|&i| eg.phrasings[i]).collect(),
            embeddings: order.iter().map(|&i| eg.embeddings[i].clone()).collect(),
            lo: eg.lo,
            hi: eg.hi,
        };
        assert_eq!(
            zeroshot_regress_frame(&frame, &shuffled, 0.2, EnsembleMode::Pooled).unwrap(),
            base
        );
        let averaged = zeroshot_regress_frame(&frame, &eg, 0.2, EnsembleMode::Averaged).unwrap();
        assert!((0.0..=30.0).contains(&averaged));
    }

    #[test]
    fn averaged_mode_pools_phrasings_per_value() {
        // Value 1 wins one phrasing strongly, value 2 wins on average.
        let e = |s: f32| unit(&[s, (1.0 - s * s).sqrt()]);
        let eg = EmbeddedGrid {
            values: vec![1, 2, 1, 2],
            phrasings: vec![0, 0, 1, 1],
            embeddings: vec![e(0.95), e(0.7), e(0.1), e(0.6)],
            lo: 1,
            hi: 2,
        };
        let f = unit(&[1.0, 0.0]);
        assert_eq!(zeroshot_regress_frame(&f, &eg, 0.2, EnsembleMode::Pooled).unwrap(), 1.0);
        assert_eq!(
            zeroshot_regress_frame(&f, &eg, 0.2, EnsembleMode::Averaged).unwrap(),
            2.0
        );
    }

    #[test]
    fn video_prediction_uses_first_frames() {
        let mut rng = seeded(9);
        let grid = build_prompt_grid(&["X"], 0, 100).unwrap();
        let eg = grid.embed::<()>(|_| Ok(random_unit(&mut rng, 5))).unwrap();
        let frame = random_unit(&mut rng, 5);
        let single = zeroshot_regress_frame(&frame, &eg, 0.2, EnsembleMode::Pooled).unwrap();
        let same = vec![frame.clone(); 10];
        let v = zeroshot_regress_video(&same, &eg, 0.2, EnsembleMode::Pooled, 10).unwrap();
        assert_eq!(v.value, single);

        let frames: Vec<Embedding> = (0..12).map(|_| random_unit(&mut rng, 5)).collect();
        let v = zeroshot_regress_video(&frames, &eg, 0.2, EnsembleMode::Pooled, 10).unwrap();
        let oracle: f64 = frames[0..10]
            .iter()
            .map(|f| zeroshot_regress_frame(f, &eg, 0.2, EnsembleMode::Pooled).unwrap())
            .sum::<f64>()
            / 10.0;
        assert_abs_diff_eq!(v.value, oracle, epsilon = 1e-12);
        assert_eq!(v.per_frame.len(), 10);
        assert!(v.frame_min() <= v.value && v.value <= v.frame_max());
        assert_eq!(
            zeroshot_regress_video(&[], &eg, 0.2, EnsembleMode::Pooled, 10).unwrap_err(),
            ZeroShotError::NoFrames
        );
    }

    #[test]
    fn two_frame_video_mean() {
        let values: Vec<i64> = (0..10).map(|v| v * 10).collect();
        // Build two frames that pick 50 and 60 respectively with k = 1.
        let g = EmbeddedGrid {
            values: values.clone(),
            phrasings: vec![0; 10],
            embeddings: (0..10)
                .map(|i| {
                    let mut v = vec![0.0f32; 10];
                    v[i] = 1.0;
                    unit(&v)
                })
                .collect(),
            lo: 0,
            hi: 90,
        };
        let mut f1 = vec![0.01f32; 10];
        f1[5] = 1.0;
        let mut f2 = vec![0.01f32; 10];
        f2[6] = 1.0;
        let v = zeroshot_regress_video(&[unit(&f1), unit(&f2)], &g, 0.1, EnsembleMode::Pooled, 10).unwrap();
        assert_eq!(v.per_frame, vec![50.0, 60.0]);
        assert_eq!(v.value, 55.0);
    }

    #[test]
    fn classification_examples() {
        let a = [unit(&[1.0, 0.0])];
        let b = [unit(&[0.0, 1.0])];
        assert_eq!(zeroshot_classify(&a, &a, 10).unwrap(), 1.0);
        assert_eq!(zeroshot_classify(&a, &b, 10).unwrap(), 0.0);

        let mut rng = seeded(1);
        let frames: Vec<Embedding> = (0..2).map(|_| random_unit(&mut rng, 4)).collect();
        let prompts: Vec<Embedding> = (0..2).map(|_| random_unit(&mut rng, 4)).collect();
        let mut oracle = 0.0;
        for f in &frames {
            let mut inner = 0.0;
            for p in &prompts {
                inner += f
                    .as_slice()
                    .iter()
                    .zip(p.as_slice())
                    .map(|(x, y)| (*x as f64) * (*y as f64))
                    .sum::<f64>();
            }
            oracle += inner / 2.0;
        }
        oracle /= 2.0;
        assert_abs_diff_eq!(
            zeroshot_classify(&frames, &prompts, 10).unwrap(),
            oracle,
            epsilon = 1e-6
        );
        assert!(matches!(
            zeroshot_classify(&a, &[unit(&[1.0, 0.0, 0.0])], 10),
            Err(ZeroShotError::Embedding(EmbeddingError::DimensionMismatch(2, 3)))
        ));
    }
}
