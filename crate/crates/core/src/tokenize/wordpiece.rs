//! WordPiece vocabulary training.
//!
//! Words start as characters (non-initial ones carrying the `##` prefix).
//! Each round merges the adjacent pair with the highest likelihood score
//! `count(ab) / (count(a) * count(b))`, ties going to the more frequent pair
//! and then to the pair created first, until the budget is reached or no
//! pairs remain. Pair counts are updated incrementally, only for words
//! touched by the merge.

use std::collections::{BTreeSet, HashMap};

use super::{TokenizeError, CONTINUATION, RESERVED};

struct Symbols {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Symbols {
    fn intern(&mut self, name: String) -> (u32, bool) {
        if let Some(&id) = self.index.get(&name) {
            return (id, false);
        }
        let id = self.names.len() as u32;
        self.index.insert(name.clone(), id);
        self.names.push(name);
        (id, true)
    }
}

type Pair = (u32, u32);

fn add_pairs(
    word: &[u32],
    count: i64,
    w: usize,
    pair_counts: &mut HashMap<Pair, i64>,
    pair_words: &mut HashMap<Pair, Vec<usize>>,
) {
    for p in word.windows(2) {
        let pair = (p[0], p[1]);
        *pair_counts.entry(pair).or_default() += count;
        if pair_words.get(&pair).and_then(|v| v.last()) != Some(&w) {
            pair_words.entry(pair).or_default().push(w);
        }
    }
}

fn remove_pairs(word: &[u32], count: i64, pair_counts: &mut HashMap<Pair, i64>) {
    for p in word.windows(2) {
        let pair = (p[0], p[1]);
        if let Some(c) = pair_counts.get_mut(&pair) {
            *c -= count;
            if *c <= 0 {
                pair_counts.remove(&pair);
            }
        }
    }
}

pub(super) fn train(word_counts: &HashMap<&str, usize>, budget: usize) -> Result<Vec<String>, TokenizeError> {
    let mut words: Vec<(&str, usize)> = word_counts.iter().map(|(w, c)| (*w, *c)).collect();
    words.sort_unstable();

    let mut alphabet = BTreeSet::new();
    for (w, _) in &words {
        for (i, c) in w.chars().enumerate() {
            alphabet.insert(if i == 0 {
                c.to_string()
            } else {
                format!("{CONTINUATION}{c}")
            });
        }
    }
    let required = RESERVED.len() + alphabet.len();
    if budget < required {
        return Err(TokenizeError::BudgetTooSmall { budget, required });
    }

    let mut symbols = Symbols {
        names: Vec::new(),
        index: HashMap::new(),
    };
    for a in &alphabet {
        symbols.intern(a.clone());
    }
    let mut vocab: Vec<String> = alphabet.into_iter().collect();

    let mut seqs: Vec<Vec<u32>> = words
        .iter()
        .map(|(w, _)| {
            w.chars()
                .enumerate()
                .map(|(i, c)| {
                    let name = if i == 0 {
                        c.to_string()
                    } else {
                        format!("{CONTINUATION}{c}")
                    };
                    symbols.index[&name]
                })
                .collect()
        })
        .collect();
    let counts: Vec<i64> = words.iter().map(|(_, c)| *c as i64).collect();

    let mut sym_counts: Vec<i64> = vec![0; symbols.names.len()];
    let mut pair_counts: HashMap<Pair, i64> = HashMap::new();
    let mut pair_words: HashMap<Pair, Vec<usize>> = HashMap::new();
    for (w, seq) in seqs.iter().enumerate() {
        for &s in seq {
            sym_counts[s as usize] += counts[w];
        }
        add_pairs(seq, counts[w], w, &mut pair_counts, &mut pair_words);
    }

    while RESERVED.len() + vocab.len() < budget {
        let best = pair_counts
            .iter()
            .filter(|(_, &c)| c > 0)
            .map(|(&pair, &c)| {
                let score = c as f64 / (sym_counts[pair.0 as usize] as f64 * sym_counts[pair.1 as usize] as f64);
                (pair, c, score)
            })
            .max_by(|x, y| {
                x.2.total_cmp(&y.2)
                    .then(x.1.cmp(&y.1))
                    .then_with(|| y.0.cmp(&x.0))
            });
        let Some((pair @ (a, b), _, _)) = best else {
            break;
        };

        let right = &symbols.names[b as usize];
        let merged = format!(
            "{}{}",
            symbols.names[a as usize],
            right.strip_prefix(CONTINUATION).unwrap_or(right)
        );
        let (m, fresh) = symbols.intern(merged);
        if fresh {
            vocab.push(symbols.names[m as usize].clone());
            sym_counts.push(0);
        }

        let touched = pair_words.remove(&pair).unwrap_or_default();
        for w in touched {
            let seq = &seqs[w];
            if !seq.windows(2).any(|p| (p[0], p[1]) == pair) {
                continue;
            }
            let count = counts[w];
            remove_pairs(seq, count, &mut pair_counts);
            let mut next = Vec::with_capacity(seq.len());
            let mut i = 0;
            while i < seq.len() {
                if i + 1 < seq.len() && (seq[i], seq[i + 1]) == pair {
                    next.push(m);
                    sym_counts[a as usize] -= count;
                    sym_counts[b as usize] -= count;
                    sym_counts[m as usize] += count;
                    i += 2;
                } else {
                    next.push(seq[i]);
                    i += 1;
                }
            }
            add_pairs(&next, count, w, &mut pair_counts, &mut pair_words);
            seqs[w] = next;
        }
        pair_counts.remove(&pair);
    }
    Ok(vocab)
}
