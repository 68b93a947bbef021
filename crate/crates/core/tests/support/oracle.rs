//! Independent recomputation of toy-model traces, series and features.
//!
//! Probabilities are exact rationals built straight from the bigram counts;
//! only the final logarithms go through `f64`. Features are evaluated from
//! their set definitions with no code shared with the library.

#![allow(dead_code)]

use std::collections::BTreeMap;

use inputrisk_core::toy_lm::BigramModel;
use num_rational::Ratio;

pub type Q = Ratio<i128>;

pub fn log2q(q: Q) -> f64 {
    assert!(*q.numer() > 0, "log of non-positive rational");
    (*q.numer() as f64).log2() - (*q.denom() as f64).log2()
}

pub fn to_f64(q: Q) -> f64 {
    *q.numer() as f64 / *q.denom() as f64
}

pub struct ExactBigram {
    pub vocab: Vec<char>,
    counts: Vec<u64>,
    start: Vec<u64>,
    alpha: i128,
}

impl ExactBigram {
    /// Needs an integral smoothing constant so rows stay rational.
    pub fn from_model(m: &BigramModel) -> Self {
        assert_eq!(m.alpha().fract(), 0.0, "oracle needs integral alpha");
        Self {
            vocab: m.vocab().to_vec(),
            counts: m.counts().to_vec(),
            start: m.start_counts().to_vec(),
            alpha: m.alpha() as i128,
        }
    }

    fn idx(&self, c: char) -> usize {
        self.vocab.iter().position(|&v| v == c).expect("symbol in vocab")
    }

    /// P(. | prev) where `prev = None` is the start row.
    pub fn row(&self, prev: Option<char>) -> Vec<Q> {
        let v = self.vocab.len();
        let counts: Vec<i128> = match prev {
            Some(c) => {
                let u = self.idx(c);
                (0..v).map(|w| self.counts[u * v + w] as i128).collect()
            }
            None => (0..v)
                .map(|w| self.start.get(w).copied().unwrap_or(0) as i128)
                .collect(),
        };
        let total: i128 = counts.iter().sum::<i128>() + self.alpha * v as i128;
        counts.into_iter().map(|c| Q::new(c + self.alpha, total)).collect()
    }
}

/// Exact series for one prompt. `None` marks an unavailable position.
#[derive(Debug, Clone)]
pub struct OracleSeries {
    pub spr: Vec<f64>,
    pub h: Vec<f64>,
    pub kl: Vec<f64>,
    pub cws: Vec<f64>,
    pub cis: Vec<Option<f64>>,
    pub maxp: Vec<f64>,
    pub odd: Vec<f64>,
}

pub fn series(lm: &ExactBigram, text: &str, gamma: f64) -> OracleSeries {
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    let v = lm.vocab.len();
    let mut s = OracleSeries {
        spr: vec![],
        h: vec![],
        kl: vec![],
        cws: vec![],
        cis: vec![],
        maxp: vec![],
        odd: vec![],
    };
    for i in 0..n {
        let prev = if i == 0 { None } else { Some(chars[i - 1]) };
        let p = lm.row(prev);
        let obs = lm.idx(chars[i]);
        let spr = -log2q(p[obs]);
        let h: f64 = p.iter().map(|&q| -to_f64(q) * log2q(q)).sum();
        let q_obs = Q::new(9, 10);
        let q_rest = Q::new(1, 10 * (v as i128 - 1));
        let kl: f64 = (0..v)
            .map(|w| {
                let q = if w == obs { q_obs } else { q_rest };
                to_f64(p[w]) * (log2q(p[w]) - log2q(q))
            })
            .sum();
        let maxp = p.iter().copied().max().unwrap();
        let odd = p
            .iter()
            .map(|&q| if q > p[obs] { q - p[obs] } else { Q::from_integer(0) })
            .fold(Q::from_integer(0), |a, b| a + b);
        let cis = if i + 1 < n {
            let next = lm.idx(chars[i + 1]);
            let full = lm.row(Some(chars[i]));
            let deleted = lm.row(prev);
            Some(log2q(full[next]) - log2q(deleted[next]))
        } else {
            None
        };
        s.spr.push(spr);
        s.h.push(h);
        s.kl.push(kl);
        s.cws.push(spr + gamma * kl);
        s.cis.push(cis);
        s.maxp.push(to_f64(maxp));
        s.odd.push(to_f64(odd));
    }
    s
}

/// Index sets from their definitions. Tokens are single chars, so token `i`
/// covers chars `[i, i + 1)`.
pub struct Sets {
    pub sentence: Vec<usize>,
    pub expression: Vec<usize>,
    pub boundary: Vec<usize>,
    pub context: Vec<usize>,
}

pub fn sets(first: usize, last: usize, span: (usize, usize)) -> Sets {
    let sentence: Vec<usize> = (first..=last).collect();
    let expression: Vec<usize> = sentence
        .iter()
        .copied()
        .filter(|&i| i < span.1 && span.0 < i + 1)
        .collect();
    let lo = *expression.iter().min().unwrap();
    let hi = *expression.iter().max().unwrap();
    let boundary: Vec<usize> = [lo.checked_sub(1), Some(hi + 1)]
        .into_iter()
        .flatten()
        .filter(|i| sentence.contains(i))
        .collect();
    let context = sentence
        .iter()
        .copied()
        .filter(|i| !expression.contains(i))
        .collect();
    Sets {
        sentence,
        expression,
        boundary,
        context,
    }
}

/// Strict order with ties up to a relative 1e-12, matching the library's
/// documented tolerance: mathematically equal values may differ in the last
/// bits on either side.
fn gt(a: f64, b: f64) -> bool {
    a - b > 1e-12 * a.abs().max(b.abs()).max(1.0)
}

fn values(series: &[Option<f64>], idx: &[usize]) -> Vec<f64> {
    idx.iter().filter_map(|&i| series[i]).collect()
}

fn agg(xs: &[f64], op: &str) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    Some(match op {
        "mean" => mean,
        "max" => xs.iter().cloned().fold(f64::MIN, f64::max),
        "min" => xs.iter().cloned().fold(f64::MAX, f64::min),
        "std" => (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt(),
        _ => unreachable!(),
    })
}

/// Every feature of the 89-entry vector by name; `None` means invalid.
pub fn features(s: &OracleSeries, sets: &Sets) -> BTreeMap<String, Option<f64>> {
    let wrap = |v: &[f64]| v.iter().map(|&x| Some(x)).collect::<Vec<_>>();
    let measures: [(&str, Vec<Option<f64>>); 4] = [
        ("spr", wrap(&s.spr)),
        ("h", wrap(&s.h)),
        ("cws", wrap(&s.cws)),
        ("cis", s.cis.clone()),
    ];
    let mut out = BTreeMap::new();
    for (name, k) in &measures {
        for (g, idx) in [
            ("sentence", &sets.sentence),
            ("expression", &sets.expression),
            ("boundary", &sets.boundary),
            ("context", &sets.context),
        ] {
            for op in ["mean", "max", "min", "std"] {
                out.insert(format!("{name}.{g}.{op}"), agg(&values(k, idx), op));
            }
        }

        let e = &sets.expression;
        let ev = values(k, e);
        // strictly decreasing: every earlier value exceeds every later one
        let mono = (!ev.is_empty()).then(|| {
            let ok = (0..ev.len()).all(|a| (a + 1..ev.len()).all(|b| gt(ev[a], ev[b])));
            if ok { 1.0 } else { 0.0 }
        });
        out.insert(format!("{name}.monotonic_decrease"), mono);

        let spikes = (!ev.is_empty()).then(|| {
            e.iter()
                .filter(|&&i| {
                    i >= 1
                        && sets.sentence.contains(&(i - 1))
                        && sets.sentence.contains(&(i + 1))
                        && matches!(
                            (k[i - 1], k[i], k[i + 1]),
                            (Some(a), Some(b), Some(c)) if gt(b, a) && gt(b, c)
                        )
                })
                .count() as f64
        });
        out.insert(format!("{name}.spike_count"), spikes);

        let end = *e.iter().max().unwrap();
        let shift = if sets.sentence.contains(&(end + 1)) {
            match (k[end], k[end + 1]) {
                (Some(a), Some(b)) => Some(b - a),
                _ => None,
            }
        } else {
            None
        };
        out.insert(format!("{name}.boundary_shift"), shift);

        let avail: Vec<(usize, usize, f64)> = sets
            .sentence
            .iter()
            .enumerate()
            .filter_map(|(pos, &i)| k[i].map(|v| (pos, i, v)))
            .collect();
        let argmax = avail.iter().fold(None::<(usize, usize, f64)>, |best, &c| match best {
            Some(b) if !gt(c.2, b.2) => Some(b),
            _ => Some(c),
        });
        let argmin = avail.iter().fold(None::<(usize, usize, f64)>, |best, &c| match best {
            Some(b) if !gt(b.2, c.2) => Some(b),
            _ => Some(c),
        });
        out.insert(
            format!("{name}.peak_in_span"),
            argmax.map(|(_, i, _)| if e.contains(&i) { 1.0 } else { 0.0 }),
        );
        let n = sets.sentence.len() as f64;
        out.insert(format!("{name}.p_min"), argmin.map(|(p, _, _)| (p + 1) as f64 / n));
        out.insert(format!("{name}.p_max"), argmax.map(|(p, _, _)| (p + 1) as f64 / n));
    }
    let peak = sets.expression.iter().map(|&i| s.spr[i]).fold(f64::MIN, f64::max);
    let rest: f64 = sets.context.iter().map(|&i| s.spr[i]).sum();
    out.insert("spr.contrast_ratio".into(), Some(peak / (rest + 1e-6)));
    out
}

/// The three baselines over the sentence.
pub fn baselines(s: &OracleSeries, first: usize, last: usize) -> [Option<f64>; 3] {
    let sent: Vec<usize> = (first..=last).collect();
    let lp = sent.iter().map(|&i| -s.spr[i]).sum::<f64>() / sent.len() as f64;
    // distributions following sentence tokens first..last-1 sit one step later
    let following: Vec<usize> = (first + 1..=last).collect();
    let mp = (!following.is_empty())
        .then(|| following.iter().map(|&i| s.maxp[i]).sum::<f64>() / following.len() as f64);
    let odd = sent.iter().map(|&i| s.odd[i]).fold(f64::MIN, f64::max);
    [Some(lp), mp, Some(odd)]
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

/// A toy-model prompt with its sentence range and expression span.
pub struct Case {
    pub model: BigramModel,
    pub text: String,
    pub first: usize,
    pub last: usize,
    pub span: (usize, usize),
}

/// Random prompts over a 16-symbol vocabulary, each at most 64 chars.
pub fn random_cases(seed: u64, count: usize) -> Vec<Case> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let vocab: Vec<char> = "abcdefghijklmnop".chars().collect();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut model = BigramModel::new(vocab.clone(), 1.0).unwrap();
        let corpus: Vec<String> = (0..rng.random_range(0..30))
            .map(|_| {
                let len = rng.random_range(1..40);
                // skewed draws so rows are far from uniform
                (0..len).map(|_| vocab[(rng.random::<f64>().powi(2) * 16.0) as usize]).collect()
            })
            .collect();
        model.train(corpus.iter().map(String::as_str)).unwrap();
        let len = rng.random_range(2..=64);
        let text: String = (0..len).map(|_| vocab[rng.random_range(0..16)]).collect();
        let first = rng.random_range(0..len);
        let last = rng.random_range(first..len);
        let start = rng.random_range(first..=last);
        let end = rng.random_range(start + 1..=last + 1);
        out.push(Case {
            model,
            text,
            first,
            last,
            span: (start, end),
        });
    }
    out
}

/// Compares every series, all 89 features and the baselines of one case
/// against the oracle. Returns a description of the first mismatch.
pub fn check_case(case: &Case, tol: f64) -> Result<(), String> {
    use inputrisk_core::corpus::CharSpan;
    use inputrisk_core::features::{build_baselines, build_full_features};
    use inputrisk_core::measures::{series_from_trace, CwsConfig, Measure};
    use inputrisk_core::trace::TokenRange;

    let exact = ExactBigram::from_model(&case.model);
    let trace = case
        .model
        .trace_prompt("case", &case.text, TokenRange::new(case.first, case.last))
        .map_err(|e| e.to_string())?;
    let cfg = CwsConfig::default();
    let o = series(&exact, &case.text, cfg.gamma);
    let expect: [(Measure, Vec<Option<f64>>); 6] = [
        (Measure::Spr, o.spr.iter().map(|&x| Some(x)).collect()),
        (Measure::H, o.h.iter().map(|&x| Some(x)).collect()),
        (Measure::Cws, o.cws.iter().map(|&x| Some(x)).collect()),
        (Measure::Cis, o.cis.clone()),
        (Measure::MaxP, o.maxp.iter().map(|&x| Some(x)).collect()),
        (Measure::Odd, o.odd.iter().map(|&x| Some(x)).collect()),
    ];
    for (m, want) in &expect {
        let got = series_from_trace(&trace, *m, cfg).map_err(|e| e.to_string())?;
        for (i, w) in want.iter().enumerate() {
            match (got.get(i), w) {
                (Some(g), Some(w)) if close(g, *w, tol) => {}
                (None, None) => {}
                (g, w) => return Err(format!("{m} at {i}: got {g:?}, oracle {w:?}")),
            }
        }
    }

    let sets = sets(case.first, case.last, case.span);
    let want = features(&o, &sets);
    let got = build_full_features(&trace, CharSpan::new(case.span.0, case.span.1), cfg)
        .map_err(|e| e.to_string())?;
    if got.len() != 89 || want.len() != 89 {
        return Err(format!("arity {} vs oracle {}", got.len(), want.len()));
    }
    for (k, name) in got.names().iter().enumerate() {
        let w = want.get(name).ok_or_else(|| format!("oracle lacks {name}"))?;
        match (got.valid[k], w) {
            (true, Some(w)) if close(got.values[k], *w, tol) => {}
            (false, None) if got.values[k] == 0.0 => {}
            (ok, w) => {
                return Err(format!("{name}: got {} (valid {ok}), oracle {w:?}", got.values[k]))
            }
        }
    }

    let b = build_baselines(&trace);
    let wb = baselines(&o, case.first, case.last);
    for (g, w) in [b.mean_log_prob, b.mean_max_token_prob, b.max_oddballness].iter().zip(wb) {
        match (g, w) {
            (Some(g), Some(w)) if close(*g, w, tol) => {}
            (None, None) => {}
            (g, w) => return Err(format!("baseline: got {g:?}, oracle {w:?}")),
        }
    }
    Ok(())
}
