//! Synthetic datasets: Gaussian blobs, a character corpus from a small
//! stochastic grammar, and scenes with planted boxes.

use rand::seq::IndexedRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, Rng};
use crate::tensor::Tensor;

pub const PAD: usize = 0;
pub const EOS: usize = 1;

const SYMBOLS: &str = " .abcdefghijklmnopqrstuvwxyz";

/// Character vocabulary: PAD, EOS, then space, period and `a`..`z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Alphabet;

impl Alphabet {
    pub fn standard() -> Self {
        Alphabet
    }

    pub fn vocab_size(&self) -> usize {
        SYMBOLS.len() + 2
    }

    /// Ids of printable symbols (everything except PAD and EOS).
    pub fn symbol_ids(&self) -> std::ops::Range<usize> {
        2..self.vocab_size()
    }

    pub fn is_symbol(&self, id: usize) -> bool {
        self.symbol_ids().contains(&id)
    }

    pub fn id_of(&self, c: char) -> Option<usize> {
        SYMBOLS.find(c).map(|i| i + 2)
    }

    pub fn char_of(&self, id: usize) -> Option<char> {
        if self.is_symbol(id) {
            SYMBOLS[id - 2..].chars().next()
        } else {
            None
        }
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| {
                self.id_of(c)
                    .ok_or_else(|| Error::Domain(format!("character {c:?} is not in the alphabet")))
            })
            .collect()
    }

    /// Renders ids as text; EOS shows as `$`, PAD and unknown ids as `_`.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&id| match self.char_of(id) {
                Some(c) => c,
                None if id == EOS => '$',
                None => '_',
            })
            .collect()
    }
}

/// Weighted choice among words.
type Choice = &'static [(&'static str, u32)];

const SUBJECTS: Choice = &[("fox", 3), ("hen", 3), ("dog", 3), ("pig", 2), ("owl", 2), ("cat", 2)];
const VERBS: Choice = &[("sees", 3), ("likes", 2), ("hears", 2), ("finds", 2)];
const ADJS: Choice = &[("red", 3), ("big", 3), ("old", 2), ("shy", 2)];
const OBJECTS: Choice = &[("cow", 6), ("yak", 2), ("ram", 2), ("elk", 2), ("bee", 1)];

/// Stochastic grammar behind the token corpus.
///
/// `the subject verb a [very* adj] object (and a object)* .`
#[derive(Debug, Clone, PartialEq)]
pub struct Grammar {
    pub adj_prob: f64,
    pub very_prob: f64,
    pub very_repeat: f64,
    pub list_prob: f64,
}

impl Grammar {
    pub fn standard() -> Self {
        Grammar {
            adj_prob: 0.35,
            very_prob: 0.3,
            very_repeat: 0.6,
            list_prob: 0.2,
        }
    }

    fn pick(rng: &mut Rng, choice: Choice) -> &'static str {
        choice.choose_weighted(rng, |&(_, w)| w).expect("non-empty choice").0
    }

    pub fn sentence(&self, rng: &mut Rng) -> String {
        let mut words = vec!["the", Self::pick(rng, SUBJECTS), Self::pick(rng, VERBS), "a"];
        if rng.random_bool(self.adj_prob) {
            if rng.random_bool(self.very_prob) {
                words.push("very");
                while rng.random_bool(self.very_repeat) {
                    words.push("very");
                }
            }
            words.push(Self::pick(rng, ADJS));
        }
        words.push(Self::pick(rng, OBJECTS));
        while rng.random_bool(self.list_prob) {
            words.extend(["and", "a", Self::pick(rng, OBJECTS)]);
        }
        let mut s = words.join(" ");
        s.push('.');
        s
    }

    /// Every word the grammar can emit.
    pub fn vocabulary() -> Vec<&'static str> {
        let mut v: Vec<&str> = [SUBJECTS, VERBS, ADJS, OBJECTS]
            .iter()
            .flat_map(|c| c.iter().map(|&(w, _)| w))
            .collect();
        v.extend(["the", "a", "very", "and"]);
        v
    }
}

/// Prompt for a corpus sentence: everything up to and including the last space.
pub fn split_prompt(tokens: &[usize]) -> Vec<usize> {
    let space = Alphabet.id_of(' ').expect("space is a symbol");
    match tokens.iter().rposition(|&t| t == space) {
        Some(i) => tokens[..=i].to_vec(),
        None => tokens.to_vec(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetKind {
    /// Two classes with means at distance 2 either side of the origin along
    /// the all-ones direction, unit isotropic variance.
    GaussBlobs { dim: usize },
    TokenCorpus,
    /// One intensity per grid cell; planted cells are bright.
    SceneVectors { grid: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Sample {
    Vector(Tensor),
    Tokens(Vec<usize>),
}

impl Sample {
    pub fn as_vector(&self) -> Result<&Tensor> {
        match self {
            Sample::Vector(t) => Ok(t),
            Sample::Tokens(_) => Err(Error::Usage("expected a vector sample, got tokens".into())),
        }
    }

    pub fn as_tokens(&self) -> Result<&[usize]> {
        match self {
            Sample::Tokens(t) => Ok(t),
            Sample::Vector(_) => Err(Error::Usage("expected a token sample, got a vector".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Target {
    Class(usize),
    /// Probability vector over classes.
    Soft(Vec<f64>),
    /// Next-token target for each position of the sample (the last one is EOS).
    NextTokens(Vec<usize>),
    /// Indices of planted cells.
    Cells(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub kind: DatasetKind,
    pub seed: u64,
    pub inputs: Vec<Sample>,
    pub targets: Vec<Target>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Hard class of sample `i`: the class itself, or the argmax of a soft target.
    pub fn class_of(&self, i: usize) -> Option<usize> {
        match &self.targets[i] {
            Target::Class(c) => Some(*c),
            Target::Soft(p) => Some(crate::tensor::argmax(p)),
            _ => None,
        }
    }

    /// Splits off the last `n` samples.
    pub fn split_tail(mut self, n: usize) -> (LabeledDataset, LabeledDataset) {
        let at = self.inputs.len().saturating_sub(n);
        let tail = LabeledDataset {
            kind: self.kind,
            seed: self.seed,
            inputs: self.inputs.split_off(at),
            targets: self.targets.split_off(at),
        };
        (self, tail)
    }
}

const SCENE_MAX_PLANTED: usize = 4;

pub fn synth_dataset(kind: DatasetKind, n: usize, seed: u64) -> Result<LabeledDataset> {
    if n == 0 {
        return Err(Error::Domain("dataset size must be at least 1".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut inputs = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    match kind {
        DatasetKind::GaussBlobs { dim } => {
            if dim == 0 {
                return Err(Error::invalid("dataset.dim", "must be positive"));
            }
            let offset = 2.0 / (dim as f64).sqrt();
            for _ in 0..n {
                let class = rng.random_range(0..2usize);
                let sign = if class == 1 { 1.0 } else { -1.0 };
                let x: Vec<f64> = (0..dim)
                    .map(|_| sign * offset + {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z
                    })
                    .collect();
                inputs.push(Sample::Vector(Tensor::vector(x)?));
                targets.push(Target::Class(class));
            }
        }
        DatasetKind::TokenCorpus => {
            let grammar = Grammar::standard();
            for _ in 0..n {
                let tokens = Alphabet.encode(&grammar.sentence(&mut rng))?;
                let mut next = tokens[1..].to_vec();
                next.push(EOS);
                inputs.push(Sample::Tokens(tokens));
                targets.push(Target::NextTokens(next));
            }
        }
        DatasetKind::SceneVectors { grid } => {
            if grid == 0 {
                return Err(Error::invalid("dataset.grid", "must be positive"));
            }
            let cells: Vec<usize> = (0..grid).collect();
            for _ in 0..n {
                let count = rng.random_range(1..=SCENE_MAX_PLANTED.min(grid));
                let mut planted: Vec<usize> = cells.choose_multiple(&mut rng, count).copied().collect();
                planted.sort_unstable();
                let x: Vec<f64> = (0..grid)
                    .map(|c| {
                        if planted.binary_search(&c).is_ok() {
                            rng.random_range(0.7..=1.0)
                        } else {
                            rng.random_range(0.0..=0.3)
                        }
                    })
                    .collect();
                inputs.push(Sample::Vector(Tensor::vector(x)?));
                targets.push(Target::Cells(planted));
            }
        }
    }
    Ok(LabeledDataset {
        kind,
        seed,
        inputs,
        targets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alphabet_round_trip() {
        let a = Alphabet::standard();
        assert_eq!(a.vocab_size(), 30);
        let ids = a.encode("the cow.").unwrap();
        assert_eq!(a.decode(&ids), "the cow.");
        assert!(ids.iter().all(|&i| a.is_symbol(i)));
        assert!(a.encode("Cow").is_err());
        assert_eq!(a.decode(&[EOS, PAD]), "$_");
    }

    #[test]
    fn regeneration_is_identical() {
        for kind in [
            DatasetKind::GaussBlobs { dim: 4 },
            DatasetKind::TokenCorpus,
            DatasetKind::SceneVectors { grid: 16 },
        ] {
            let a = synth_dataset(kind, 20, 3).unwrap();
            let b = synth_dataset(kind, 20, 3).unwrap();
            assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
            assert_eq!(a.inputs.len(), a.targets.len());
            assert_eq!(synth_dataset(kind, 1, 3).unwrap().len(), 1);
        }
        assert!(synth_dataset(DatasetKind::TokenCorpus, 0, 3).is_err());
    }

    #[test]
    fn sentences_are_well_formed() {
        let mut rng = rng_from_seed(9);
        let g = Grammar::standard();
        for _ in 0..200 {
            let s = g.sentence(&mut rng);
            assert!(s.ends_with('.'));
            let words: Vec<&str> = s.trim_end_matches('.').split(' ').collect();
            assert!(words.len() >= 5, "{s}");
            assert!(words.iter().all(|w| Grammar::vocabulary().contains(w)), "{s}");
            let prompt = split_prompt(&Alphabet.encode(&s).unwrap());
            assert!(prompt.len() >= 10, "{s}");
        }
    }

    #[test]
    fn scene_targets_match_bright_cells() {
        let d = synth_dataset(DatasetKind::SceneVectors { grid: 16 }, 30, 1).unwrap();
        for (x, t) in d.inputs.iter().zip(&d.targets) {
            let Target::Cells(cells) = t else { panic!() };
            let x = x.as_vector().unwrap();
            for (i, v) in x.data().iter().enumerate() {
                assert_eq!(*v >= 0.7, cells.contains(&i));
            }
        }
    }
}
