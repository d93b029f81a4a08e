//! Synthetic fixtures shared by the CLI test targets.

#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// SplitMix64; enough randomness for fixtures without another dependency.
pub struct Rng(pub u64);

impl Rng {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }
}

pub const CUES: [[&str; 6]; 3] = [
    ["invaders", "deport", "savages", "tribe", "islamists", "ban"],
    ["kitchen", "women", "girls", "feminazi", "blonde", "sandwich"],
    ["coffee", "match", "weekend", "sunny", "music", "lunch"],
];
pub const LABELS: [&str; 3] = ["racist", "sexist", "none"];
const FILLER: [&str; 10] = ["the", "a", "is", "just", "so", "really", "today", "lol", "#mkr", "@user"];

/// `n` tweets with class-specific cue words, filler and some cross-class
/// noise, written as CSV with `id,text,label` columns.
pub fn tweets_csv(n: usize, seed: u64) -> String {
    let mut rng = Rng(seed);
    let mut out = String::from("id,text,label\n");
    for i in 0..n {
        let c = match rng.below(20) {
            0..=2 => 0,
            3..=7 => 1,
            _ => 2,
        };
        let mut toks = vec![CUES[c][rng.below(6)], CUES[c][rng.below(6)]];
        for _ in 0..3 {
            toks.push(FILLER[rng.below(FILLER.len())]);
        }
        if rng.below(5) == 0 {
            toks.push(CUES[rng.below(3)][rng.below(6)]);
        }
        let _ = writeln!(out, "t{i},{},{}", toks.join(" "), LABELS[c]);
    }
    out
}

/// Random vectors for every cue and filler word.
pub fn vectors_txt(dim: usize, seed: u64) -> String {
    let mut rng = Rng(seed);
    let mut out = String::new();
    let fillers = FILLER.iter().map(|w| w.trim_start_matches(['#', '@']));
    for w in CUES.iter().flatten().copied().chain(fillers) {
        out.push_str(w);
        for _ in 0..dim {
            let _ = write!(out, " {:.5}", rng.unit() * 2.0 - 1.0);
        }
        out.push('\n');
    }
    out
}

/// Writes tweets.csv, vectors.txt and run.toml into `dir`.
pub fn write_fixture(dir: &Path, n: usize, methods: &[&str], k: usize) {
    let dim = 8;
    fs::write(dir.join("tweets.csv"), tweets_csv(n, 11)).unwrap();
    fs::write(dir.join("vectors.txt"), vectors_txt(dim, 12)).unwrap();
    let mut cfg = format!(
        "[dataset]\npath = \"tweets.csv\"\n\n[embeddings]\npath = \"vectors.txt\"\ndim = {dim}\n\n\
         [run]\nk = {k}\nseed = 5\nverbosity = \"warn\"\n\n\
         [defaults.neural]\nembedding_dim = {dim}\nepochs = 2\nlstm = {{ hidden = 8 }}\n\
         cnn = {{ feature_maps = 4 }}\n\n[defaults.gbdt]\nn_rounds = 10\n"
    );
    for m in methods {
        let _ = write!(cfg, "\n[[specs]]\nmethod = \"{m}\"\n");
    }
    fs::write(dir.join("run.toml"), cfg).unwrap();
}
