use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::{finish, measure, AttackConfig, AttackResult};
use crate::cost::HardwareProfile;
use crate::error::{Error, Result};
use crate::models::{Alphabet, DynModel, GeneratorModel, Sample, Thresholds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EditLevel {
    Character,
    Word,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EditKind {
    Insert,
    Delete,
    Substitute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextMode {
    Whitebox,
    Blackbox,
}

/// One edit. `position` counts characters or word units depending on `level`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EditOp {
    pub level: EditLevel,
    pub kind: EditKind,
    pub position: usize,
    pub replacement: Option<String>,
}

/// Synthetic embedding-neighbor table used for word substitutions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordNeighbors {
    table: BTreeMap<String, Vec<String>>,
}

impl WordNeighbors {
    pub fn standard() -> Self {
        Self::parse(include_str!("../../data/word_neighbors.txt")).expect("bundled table parses")
    }

    /// Lines of the form `word: neighbor neighbor ...`; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut table = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (word, rest) = line
                .split_once(':')
                .ok_or_else(|| Error::Domain(format!("neighbor table line {}: missing ':'", n + 1)))?;
            let entry: Vec<String> = rest.split_whitespace().map(str::to_string).collect();
            for w in std::iter::once(word.trim()).chain(entry.iter().map(String::as_str)) {
                if w.is_empty() || !w.chars().all(|c| c.is_ascii_lowercase()) {
                    return Err(Error::Domain(format!("neighbor table line {}: bad word {w:?}", n + 1)));
                }
            }
            table.insert(word.trim().to_string(), entry);
        }
        Ok(WordNeighbors { table })
    }

    pub fn neighbors(&self, word: &str) -> &[String] {
        self.table.get(word).map_or(&[], Vec::as_slice)
    }

    /// Every word in the table, sorted.
    pub fn vocabulary(&self) -> Vec<String> {
        let mut all = BTreeSet::new();
        for (w, ns) in &self.table {
            all.insert(w.clone());
            all.extend(ns.iter().cloned());
        }
        all.into_iter().collect()
    }
}

fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Word units of a token sequence: runs of letters, and every other
/// non-space symbol on its own. Also reports a trailing space.
pub fn word_units(tokens: &[usize]) -> (Vec<String>, bool) {
    let text = Alphabet.decode(tokens);
    let mut units = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if c.is_ascii_lowercase() {
            word.push(c);
            continue;
        }
        if !word.is_empty() {
            units.push(std::mem::take(&mut word));
        }
        if c != ' ' {
            units.push(c.to_string());
        }
    }
    if !word.is_empty() {
        units.push(word);
    }
    (units, text.ends_with(' '))
}

fn render_units(units: &[String], trailing_space: bool) -> Result<Vec<usize>> {
    let mut text = String::new();
    for (i, u) in units.iter().enumerate() {
        if i > 0 && u != "." {
            text.push(' ');
        }
        text.push_str(u);
    }
    if trailing_space {
        text.push(' ');
    }
    Alphabet.encode(&text)
}

pub fn char_edit_distance(a: &[usize], b: &[usize]) -> usize {
    levenshtein(a, b)
}

pub fn word_edit_distance(a: &[usize], b: &[usize]) -> usize {
    levenshtein(&word_units(a).0, &word_units(b).0)
}

pub fn edit_distance(level: EditLevel, a: &[usize], b: &[usize]) -> usize {
    match level {
        EditLevel::Character => char_edit_distance(a, b),
        EditLevel::Word => word_edit_distance(a, b),
    }
}

/// Applies one edit to a prompt.
pub fn apply_edit(tokens: &[usize], op: &EditOp) -> Result<Vec<usize>> {
    let bad = || Error::Domain(format!("edit {op:?} does not fit a prompt of {} tokens", tokens.len()));
    match op.level {
        EditLevel::Character => {
            let repl = || -> Result<usize> {
                let s = op.replacement.as_deref().ok_or_else(bad)?;
                let mut chars = s.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) => Alphabet.id_of(c).ok_or_else(bad),
                    _ => Err(bad()),
                }
            };
            let mut out = tokens.to_vec();
            match op.kind {
                EditKind::Insert if op.position <= out.len() => out.insert(op.position, repl()?),
                EditKind::Delete if op.position < out.len() => {
                    out.remove(op.position);
                }
                EditKind::Substitute if op.position < out.len() => out[op.position] = repl()?,
                _ => return Err(bad()),
            }
            Ok(out)
        }
        EditLevel::Word => {
            let (mut units, trailing) = word_units(tokens);
            let repl = || op.replacement.clone().ok_or_else(bad);
            match op.kind {
                EditKind::Insert if op.position <= units.len() => units.insert(op.position, repl()?),
                EditKind::Delete if op.position < units.len() => {
                    units.remove(op.position);
                }
                EditKind::Substitute if op.position < units.len() => units[op.position] = repl()?,
                _ => return Err(bad()),
            }
            render_units(&units, trailing)
        }
    }
}

fn candidates(tokens: &[usize], level: EditLevel, neighbors: &WordNeighbors) -> Vec<EditOp> {
    let op = |kind, position, replacement: Option<String>| EditOp {
        level,
        kind,
        position,
        replacement,
    };
    let mut out = Vec::new();
    match level {
        EditLevel::Character => {
            let symbols: Vec<String> = Alphabet
                .symbol_ids()
                .filter_map(|id| Alphabet.char_of(id))
                .map(String::from)
                .collect();
            for p in 0..=tokens.len() {
                for s in &symbols {
                    out.push(op(EditKind::Insert, p, Some(s.clone())));
                }
                if p < tokens.len() {
                    out.push(op(EditKind::Delete, p, None));
                    for (id, s) in Alphabet.symbol_ids().zip(&symbols) {
                        if id != tokens[p] {
                            out.push(op(EditKind::Substitute, p, Some(s.clone())));
                        }
                    }
                }
            }
        }
        EditLevel::Word => {
            let (units, _) = word_units(tokens);
            let vocab = neighbors.vocabulary();
            for p in 0..=units.len() {
                for w in &vocab {
                    out.push(op(EditKind::Insert, p, Some(w.clone())));
                }
                if p < units.len() {
                    if units.len() > 1 {
                        out.push(op(EditKind::Delete, p, None));
                    }
                    for n in neighbors.neighbors(&units[p]) {
                        out.push(op(EditKind::Substitute, p, Some(n.clone())));
                    }
                }
            }
        }
    }
    out
}

/// Candidate edits with their resulting prompts; edits that leave the prompt
/// unchanged, duplicate an earlier result or empty it are dropped.
fn expand(tokens: &[usize], level: EditLevel, neighbors: &WordNeighbors) -> Vec<(EditOp, Vec<usize>)> {
    let mut seen = HashSet::new();
    seen.insert(tokens.to_vec());
    candidates(tokens, level, neighbors)
        .into_iter()
        .filter_map(|op| {
            let next = apply_edit(tokens, &op).ok()?;
            (!next.is_empty() && seen.insert(next.clone())).then_some((op, next))
        })
        .collect()
}

/// First-order change of the surrogate when the right-aligned context window
/// of `old` is replaced by that of `new`.
fn predicted_change(m: &GeneratorModel, grad: &[f64], old: &[usize], new: &[usize]) -> f64 {
    let v = m.spec().vocab_size;
    let pad = m.spec().pad_id;
    let mut delta = 0.0;
    for j in 1..=m.spec().context {
        let Some(pos) = old.len().checked_sub(j) else { break };
        let row = &grad[pos * v..(pos + 1) * v];
        let new_tok = new.len().checked_sub(j).map_or(pad, |i| new[i]);
        delta += row[new_tok] - row[old[pos]];
    }
    delta
}

/// Edit attack on a generator prompt with at most `cfg.epsilon` edits.
///
/// White-box: each round scores every candidate edit by the first-order
/// decrease of the surrogate and applies the best one if it predicts any
/// decrease. Black-box: each round queries every candidate and keeps the
/// costliest if it strictly beats the current prompt; otherwise it stops.
/// It also stops once the prompt decodes to the length cap, since every
/// decoding step costs the same and no edit can then do better.
#[allow(clippy::too_many_arguments)]
pub fn text_attack(
    model: &DynModel,
    prompt: &[usize],
    level: EditLevel,
    mode: TextMode,
    cfg: &AttackConfig,
    th: &Thresholds,
    profile: &HardwareProfile,
    neighbors: &WordNeighbors,
) -> Result<AttackResult> {
    let g = model.as_generator()?;
    cfg.validate()?;
    if cfg.epsilon < 1.0 || cfg.epsilon.fract() != 0.0 {
        return Err(Error::Domain(format!("edit budget {} must be a whole number >= 1", cfg.epsilon)));
    }
    if prompt.is_empty() {
        return Err(Error::Domain("cannot attack an empty prompt".into()));
    }
    if let Some(&t) = prompt.iter().find(|&&t| !Alphabet.is_symbol(t)) {
        return Err(Error::Domain(format!("prompt token {t} is not a printable symbol")));
    }
    let budget = cfg.epsilon as usize;
    let sample = |t: &[usize]| Sample::Tokens(t.to_vec());
    let benign = measure(model, &sample(prompt), th, profile)?;
    let mut cur = prompt.to_vec();
    let mut cur_cost = benign;
    let mut edits = Vec::new();
    let mut queries = 1;
    let mut trajectory = Vec::new();
    let cap = th.max_len.unwrap_or(g.spec().max_len) as u64;
    for _ in 0..budget {
        if mode == TextMode::Blackbox && cur_cost.iterations >= cap {
            break;
        }
        let options = expand(&cur, level, neighbors);
        let chosen = match mode {
            TextMode::Blackbox => {
                let mut best: Option<(EditOp, Vec<usize>, _)> = None;
                for (op, next) in options {
                    let cost = measure(model, &sample(&next), th, profile)?;
                    queries += 1;
                    let bar = best.as_ref().map_or(cur_cost, |b| b.2);
                    if cfg.metric.of(&cost) > cfg.metric.of(&bar) {
                        best = Some((op, next, cost));
                    }
                }
                best.map(|(op, next, cost)| {
                    cur_cost = cost;
                    (op, next)
                })
            }
            TextMode::Whitebox => {
                let s = super::surrogate_loss(model, &sample(&cur), th)?;
                trajectory.push(s.loss);
                let mut best: Option<(f64, EditOp, Vec<usize>)> = None;
                for (op, next) in options {
                    let decrease = -predicted_change(g, s.grad.data(), &cur, &next);
                    if decrease > best.as_ref().map_or(0.0, |b| b.0) {
                        best = Some((decrease, op, next));
                    }
                }
                best.map(|(_, op, next)| (op, next))
            }
        };
        match chosen {
            Some((op, next)) => {
                edits.push(op);
                cur = next;
            }
            None => break,
        }
    }
    let adv_cost = match mode {
        TextMode::Blackbox => cur_cost,
        TextMode::Whitebox => measure(model, &sample(&cur), th, profile)?,
    };
    let ok = edit_distance(level, prompt, &cur) <= budget && cur.iter().all(|&t| Alphabet.is_symbol(t));
    let queries = if mode == TextMode::Blackbox { queries } else { 0 };
    finish(Sample::Tokens(cur), benign, adv_cost, queries, ok, trajectory, edits)
}
