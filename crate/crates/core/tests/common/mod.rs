#![allow(clippy::needless_range_loop)]

#![allow(dead_code)]

use coltype::augment::ModelKind;
use coltype::features::{FeatureVector, FEATURE_COUNT};
use coltype::nn::{Aggregation, ArchitectureConfig, Network, Params, Pass, Tape};
use coltype::rng;
use coltype::tokenize::TokenSequence;
use coltype::train::cross_entropy;
use rand::Rng as _;

pub const FD_EPS: f64 = 1e-5;
/// Denominator floor of the relative error, so gradients that are zero
/// analytically and numerically compare as equal.
pub const REL_FLOOR: f64 = 1e-6;

pub fn tiny_config(mode: ModelKind, aggregation: Aggregation) -> ArchitectureConfig {
    ArchitectureConfig {
        mode,
        vocab_size: 12,
        embedding_dim: 4,
        hidden_size: 3,
        feature_dim: 4,
        dense_widths: vec![6],
        dropout: 0.3,
        aggregation,
        num_classes: 3,
        slots: 3,
        max_len: 8,
        slot_max_len: 4,
        ..Default::default()
    }
}

pub fn seq(ids: &[u32], max_len: usize) -> TokenSequence {
    let mut v = ids.to_vec();
    v.resize(max_len, 0);
    let mut mask = vec![1u8; ids.len()];
    mask.resize(max_len, 0);
    TokenSequence {
        ids: v,
        attention_mask: mask,
        max_len,
    }
}

pub enum GradInput {
    Single(TokenSequence),
    Multi(Vec<TokenSequence>, Vec<bool>),
}

pub struct Case {
    pub net: Network,
    pub input: GradInput,
    pub feats: FeatureVector,
    pub label: usize,
    pub dropout_seed: u64,
}

impl Case {
    pub fn random(mode: ModelKind, aggregation: Aggregation, seed: u64) -> Case {
        let cfg = tiny_config(mode, aggregation);
        let mut r = rng::derive(seed, &[1000]);
        let mut net = Network::new(cfg.clone(), &mut rng::derive(seed, &[1001])).unwrap();
        // random biases so no unit sits exactly at a ReLU kink
        for t in net.params.tensors_mut() {
            for x in t.data_mut() {
                if *x == 0.0 {
                    *x = r.random_range(-0.1..0.1);
                }
            }
        }
        let mut ids = |n: usize| -> Vec<u32> { (0..n).map(|_| r.random_range(1..12)).collect() };
        let input = match mode {
            ModelKind::Single => GradInput::Single(seq(&ids(6), cfg.max_len)),
            ModelKind::Multi => {
                let slots = vec![seq(&ids(3), 4), seq(&ids(4), 4), seq(&[], 4)];
                GradInput::Multi(slots, vec![true, true, false])
            }
        };
        let feats = FeatureVector(std::array::from_fn(|_| r.random_range(-2.0..2.0)));
        Case {
            net,
            input,
            feats,
            label: (seed % 3) as usize,
            dropout_seed: seed,
        }
    }

    fn run(&self, net: &Network, tape: Option<&mut Tape>) -> Vec<f64> {
        let mut dr = rng::derive(self.dropout_seed, &[1002]);
        let pass = Pass::Train(&mut dr);
        match &self.input {
            GradInput::Single(s) => net.forward_single(s, &self.feats, pass, tape).unwrap(),
            GradInput::Multi(s, m) => net.forward_multi(s, m, &self.feats, pass, tape).unwrap(),
        }
    }

    pub fn loss(&self, net: &Network) -> f64 {
        cross_entropy(&self.run(net, None), self.label, 1.0).unwrap().0
    }

    pub fn analytic(&self) -> Params {
        let mut tape = Tape::new();
        let probs = self.run(&self.net, Some(&mut tape));
        let (_, d) = cross_entropy(&probs, self.label, 1.0).unwrap();
        let mut g = Params::zeros(&self.net.config);
        self.net.backward(&tape, &d, &mut g).unwrap();
        g
    }
}

pub struct GradReport {
    pub max_rel_error: f64,
    pub worst: String,
    pub checked: usize,
}

/// Compare every analytic gradient entry with central differences.
pub fn gradient_check(case: &Case) -> GradReport {
    let analytic = case.analytic();
    let mut net = case.net.clone();
    let names: Vec<String> = analytic.named().into_iter().map(|(n, _)| n).collect();
    let analytic: Vec<Vec<f64>> = analytic.tensors().iter().map(|t| t.data().to_vec()).collect();
    let mut report = GradReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for (ti, name) in names.iter().enumerate() {
        for j in 0..analytic[ti].len() {
            let orig = net.params.tensors()[ti].data()[j];
            net.params.tensors_mut()[ti].data_mut()[j] = orig + FD_EPS;
            let up = case.loss(&net);
            net.params.tensors_mut()[ti].data_mut()[j] = orig - FD_EPS;
            let down = case.loss(&net);
            net.params.tensors_mut()[ti].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * FD_EPS);
            let a = analytic[ti][j];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(REL_FLOOR);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = format!("{name}[{j}]: analytic {a:e}, numeric {numeric:e}");
            }
            report.checked += 1;
        }
    }
    report
}

pub fn assert_finite(f: &FeatureVector) {
    assert_eq!(f.0.len(), FEATURE_COUNT);
    assert!(f.0.iter().all(|x| x.is_finite()));
}
