//! Reduced-scale verification suites: the codec round trip, lattice inference
//! against brute-force enumeration, and end-to-end gradients against central
//! differences. Each suite is seeded and finishes in about a second.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::crf;
use crate::encoder::Mode;
use crate::eval::{score, MatchMode};
use crate::io::CorpusRecord;
use crate::oracle::{count_sequences, oracle_summary};
use crate::synth::{random_model, random_tag_sequence, random_tokens, random_triplets, small_config};
use crate::tagging::{decode, encode, Scheme};
use crate::training::{filter_instances, loss_and_gradient, nll_loss};

const ORACLE_CAP: u64 = 50_000;
const TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

pub fn run_all(seed: u64) -> Vec<SuiteReport> {
    vec![codec(seed), inference(seed), gradients(seed), evaluation(seed)]
}

fn scheme_of(rng: &mut ChaCha8Rng) -> Scheme {
    if rng.gen_bool(0.5) {
        Scheme::TargetFirst
    } else {
        Scheme::OpinionFirst
    }
}

pub fn codec(seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cases = 1000;
    let mut failures = 0;
    for _ in 0..cases {
        let n = rng.gen_range(1..=12);
        let m = rng.gen_range(0..=4);
        let scheme = scheme_of(&mut rng);
        let triplets = random_triplets(&mut rng, n, m, scheme);
        if !matches!(encode(n, &triplets, scheme, m).map(|s| decode(&s)), Ok(Ok(ref t)) if *t == triplets) {
            failures += 1;
        }
        let seq = random_tag_sequence(&mut rng, n, m, scheme);
        if !matches!(decode(&seq).map(|t| encode(n, &t, scheme, m)), Ok(Ok(ref s)) if *s == seq) {
            failures += 1;
        }
    }
    SuiteReport {
        name: "codec",
        passed: failures == 0,
        detail: format!("{} round trips, {failures} failures", 2 * cases),
    }
}

pub fn inference(seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let models = 100;
    let (mut score_err, mut z_err, mut mass_err, mut argmax_bad) = (0f64, 0f64, 0f64, 0);
    for _ in 0..models {
        let (n, m, mask) = loop {
            let n = rng.gen_range(1..=6);
            let m = rng.gen_range(0..=2);
            let mask = rng.gen_bool(0.75);
            if count_sequences(n, m, mask) <= ORACLE_CAP as u128 {
                break (n, m, mask);
            }
        };
        let hidden = rng.gen_range(1..=4);
        let scheme = scheme_of(&mut rng);
        let model = random_model(&mut rng, small_config(hidden, m, scheme, mask), 8);
        let tokens = random_tokens(&mut rng, &model.vocab, n);
        let state = model.encode(&tokens, &mut Mode::Eval).expect("non-empty sentence");
        let summary = oracle_summary(&model, &state, ORACLE_CAP).expect("tractable by construction");

        let em = model.emissions(&state);
        let trans = crf::effective_transitions(&model);
        let (path, best) = crf::viterbi_path(&em, &trans);
        let log_z = crf::forward(&em, &trans).log_z;
        score_err = score_err.max((best - summary.max_score).abs());
        z_err = z_err.max((log_z - summary.log_z).abs());
        argmax_bad += usize::from(path != summary.argmax);
        let mut mass = 0.0;
        crate::oracle::oracle_for_each(&model, &state, ORACLE_CAP, |_, s| mass += (s - log_z).exp())
            .expect("tractable by construction");
        mass_err = mass_err.max((mass - 1.0).abs());
    }
    SuiteReport {
        name: "inference",
        passed: score_err <= TOLERANCE && z_err <= TOLERANCE && mass_err <= TOLERANCE && argmax_bad == 0,
        detail: format!(
            "{models} models; max score err {score_err:.1e}, max log Z err {z_err:.1e}, max |sum p - 1| {mass_err:.1e}, {argmax_bad} argmax mismatches"
        ),
    }
}

pub fn gradients(seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let step = 1e-4;
    let mut worst = 0f64;
    let mut checked = 0;
    for _ in 0..3 {
        let n = rng.gen_range(2..=5);
        let m = rng.gen_range(0..=2);
        let scheme = scheme_of(&mut rng);
        let mut model = random_model(&mut rng, small_config(3, m, scheme, true), 6);
        let record = CorpusRecord {
            tokens: random_tokens(&mut rng, &model.vocab, n),
            triplets: random_triplets(&mut rng, n, m, scheme),
        };
        let (instances, _) = filter_instances(std::slice::from_ref(&record), scheme, Some(m));
        let batch = &instances[..1];
        let (_, grads) = loss_and_gradient(&model, &batch[0], &mut Mode::Eval).expect("instance encodes");
        let groups = grads.tensors().len();
        for ti in 0..groups {
            let len = grads.tensors()[ti].1.len();
            // every fifth entry keeps the suite fast
            for idx in (0..len).step_by(5) {
                let x = model.params().tensors()[ti].1.data[idx];
                model.params_mut().tensors_mut()[ti].1.data[idx] = x + step;
                let up = nll_loss(&model, batch).expect("valid instance");
                model.params_mut().tensors_mut()[ti].1.data[idx] = x - step;
                let down = nll_loss(&model, batch).expect("valid instance");
                model.params_mut().tensors_mut()[ti].1.data[idx] = x;
                let numeric = (up - down) / (2.0 * step);
                let analytic = grads.tensors()[ti].1.data[idx];
                worst = worst.max((analytic - numeric).abs() / numeric.abs().max(1.0));
                checked += 1;
            }
        }
    }
    SuiteReport {
        name: "gradients",
        passed: worst < 1e-5,
        detail: format!("{checked} parameters, max relative error {worst:.2e}"),
    }
}

pub fn evaluation(seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(3));
    let pairs = 300;
    let mut violations = 0;
    for _ in 0..pairs {
        let sentences = rng.gen_range(1..5);
        let mut sets = || -> Vec<_> {
            (0..sentences)
                .map(|_| random_triplets(&mut rng, 8, 3, Scheme::TargetFirst))
                .collect()
        };
        let gold = sets();
        let pred = sets();
        let exact = score(&gold, &pred, MatchMode::Exact).expect("aligned").matched;
        for mode in [MatchMode::PartialTarget, MatchMode::PartialOpinion] {
            violations += usize::from(score(&gold, &pred, mode).expect("aligned").matched < exact);
        }
    }
    SuiteReport {
        name: "evaluation",
        passed: violations == 0,
        detail: format!("{pairs} random pairs, {violations} partial < exact violations"),
    }
}
