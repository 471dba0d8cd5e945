use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::hexfloat;
use crate::{Error, Result};

/// Outcome of cross-modal verification; `Matched` is the only accepting one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Verdict {
    Matched,
    Mismatched,
    Unmatched,
}

impl Verdict {
    /// In vote-tie priority order.
    pub const ALL: [Verdict; 3] = [Verdict::Matched, Verdict::Mismatched, Verdict::Unmatched];

    pub fn name(self) -> &'static str {
        match self {
            Verdict::Matched => "matched",
            Verdict::Mismatched => "mismatched",
            Verdict::Unmatched => "unmatched",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Verdict {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Verdict::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown class `{s}`")))
    }
}

/// Kernel `(γ⟨x, z⟩ + r)^5` and the soft-margin cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvcParams {
    pub c: f64,
    pub gamma: f64,
    pub coef0: f64,
    /// Stop once the maximal KKT violation drops below this.
    pub tolerance: f64,
}

pub const KERNEL_DEGREE: i32 = 5;

impl Default for SvcParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            gamma: 1.0,
            coef0: 1.0,
            tolerance: 1e-3,
        }
    }
}

impl SvcParams {
    pub fn kernel(&self, a: &[f64; 2], b: &[f64; 2]) -> f64 {
        (self.gamma * (a[0] * b[0] + a[1] * b[1]) + self.coef0).powi(KERNEL_DEGREE)
    }

    fn validate(&self) -> Result<()> {
        let ok = self.c > 0.0 && self.c.is_finite() && self.gamma.is_finite() && self.coef0.is_finite() && self.tolerance > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid SVC parameters {self:?}")))
        }
    }
}

/// Dual solution of one binary problem with labels `±1`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarySolution {
    pub alpha: Vec<f64>,
    /// Decision function is `Σ αᵢ yᵢ K(xᵢ, x) − rho`.
    pub rho: f64,
    pub iterations: usize,
}

/// Dual soft-margin SVM by SMO with maximal-violating-pair selection
/// (second-order choice of the second index).
pub fn train_binary(xs: &[[f64; 2]], ys: &[f64], params: &SvcParams) -> Result<BinarySolution> {
    params.validate()?;
    let n = xs.len();
    if n != ys.len() || !ys.iter().all(|y| *y == 1.0 || *y == -1.0) {
        return Err(Error::invalid("binary labels must be ±1, one per sample"));
    }
    if !ys.contains(&1.0) || !ys.contains(&-1.0) {
        return Err(Error::invalid("binary training needs both labels"));
    }
    let k: Vec<f64> = (0..n * n).map(|idx| params.kernel(&xs[idx / n], &xs[idx % n])).collect();
    let q = |i: usize, j: usize| ys[i] * ys[j] * k[i * n + j];
    let c = params.c;
    let mut alpha = vec![0.0f64; n];
    let mut grad = vec![-1.0f64; n];
    let in_up = |a: f64, y: f64| (y > 0.0 && a < c) || (y < 0.0 && a > 0.0);
    let in_low = |a: f64, y: f64| (y > 0.0 && a > 0.0) || (y < 0.0 && a < c);
    let max_iter = (100 * n).max(10_000_000);
    let mut iterations = 0;
    while iterations < max_iter {
        // i: maximal −y∇f over the up set
        let mut i = usize::MAX;
        let mut gmax = f64::NEG_INFINITY;
        for t in 0..n {
            if in_up(alpha[t], ys[t]) && -ys[t] * grad[t] > gmax {
                gmax = -ys[t] * grad[t];
                i = t;
            }
        }
        let mut gmin = f64::INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !in_low(alpha[t], ys[t]) {
                continue;
            }
            let v = -ys[t] * grad[t];
            gmin = gmin.min(v);
            if i != usize::MAX && v < gmax {
                let b = gmax - v;
                let a = (k[i * n + i] + k[t * n + t] - 2.0 * k[i * n + t]).max(1e-12);
                let score = -(b * b) / a;
                if score < best {
                    best = score;
                    j = t;
                }
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin < params.tolerance {
            break;
        }
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let quad = (k[i * n + i] + k[j * n + j] - 2.0 * k[i * n + j]).max(1e-12);
        if ys[i] != ys[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += q(t, i) * di + q(t, j) * dj;
        }
    }

    // rho: mean over free vectors, else the middle of the feasible interval
    let mut free_sum = 0.0;
    let mut free = 0usize;
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    for t in 0..n {
        let yg = ys[t] * grad[t];
        if alpha[t] > 0.0 && alpha[t] < c {
            free_sum += yg;
            free += 1;
        } else if (alpha[t] >= c && ys[t] < 0.0) || (alpha[t] <= 0.0 && ys[t] > 0.0) {
            ub = ub.min(yg);
        } else {
            lb = lb.max(yg);
        }
    }
    let rho = if free > 0 { free_sum / free as f64 } else { (ub + lb) / 2.0 };
    Ok(BinarySolution {
        alpha,
        rho,
        iterations,
    })
}

/// Largest violation of the KKT conditions by `sol`, recomputed from scratch:
/// `yᵢf(xᵢ) ≥ 1` at `αᵢ = 0`, `= 1` for free `αᵢ`, `≤ 1` at `αᵢ = C`.
pub fn kkt_violation(xs: &[[f64; 2]], ys: &[f64], sol: &BinarySolution, params: &SvcParams) -> f64 {
    let mut worst = 0.0f64;
    for (i, x) in xs.iter().enumerate() {
        let f: f64 = xs
            .iter()
            .zip(ys)
            .zip(&sol.alpha)
            .map(|((xj, yj), aj)| aj * yj * params.kernel(xj, x))
            .sum::<f64>()
            - sol.rho;
        let margin = ys[i] * f - 1.0;
        let a = sol.alpha[i];
        let v = if a <= 0.0 {
            (-margin).max(0.0)
        } else if a >= params.c {
            margin.max(0.0)
        } else {
            margin.abs()
        };
        worst = worst.max(v);
        worst = worst.max((-a).max(a - params.c).max(0.0));
    }
    worst
}

/// One-vs-one classifier for the pair (`positive`, `negative`).
#[derive(Debug, Clone, PartialEq)]
pub struct BinarySvc {
    pub positive: Verdict,
    pub negative: Verdict,
    /// Support vectors with coefficients `αᵢyᵢ` (positive class `y = +1`).
    pub support: Vec<([f64; 2], f64)>,
    pub rho: f64,
}

impl BinarySvc {
    pub fn decision(&self, params: &SvcParams, x: &[f64; 2]) -> f64 {
        self.support.iter().map(|(sv, coef)| coef * params.kernel(sv, x)).sum::<f64>() - self.rho
    }
}

/// Per-classifier training diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryAudit {
    pub positive: Verdict,
    pub negative: Verdict,
    pub kkt_violation: f64,
    /// `|Σ αᵢ yᵢ|`.
    pub equality_residual: f64,
    pub alpha_in_box: bool,
    pub iterations: usize,
}

/// Multi-class classifier over `(MCS, ν)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvcModel {
    params: SvcParams,
    classifiers: Vec<BinarySvc>,
}

/// Labelled training sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub features: [f64; 2],
    pub class: Verdict,
}

impl SvcModel {
    pub fn train(samples: &[Sample], params: &SvcParams) -> Result<Self> {
        Ok(Self::train_audited(samples, params)?.0)
    }

    /// Trains one binary SVM per pair of present classes. Samples are put in a
    /// canonical order first, so the model does not depend on input order.
    pub fn train_audited(samples: &[Sample], params: &SvcParams) -> Result<(Self, Vec<BinaryAudit>)> {
        params.validate()?;
        if samples.iter().any(|s| !s.features.iter().all(|v| v.is_finite())) {
            return Err(Error::invalid("non-finite training sample"));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(|a, b| {
            a.class
                .cmp(&b.class)
                .then(a.features[0].total_cmp(&b.features[0]))
                .then(a.features[1].total_cmp(&b.features[1]))
        });
        let present: Vec<Verdict> = Verdict::ALL
            .into_iter()
            .filter(|c| sorted.iter().any(|s| s.class == *c))
            .collect();
        if present.len() < 2 {
            return Err(Error::invalid("SVC training needs samples from at least two classes"));
        }
        let mut classifiers = Vec::new();
        let mut audits = Vec::new();
        for (a, &pos) in present.iter().enumerate() {
            for &neg in &present[a + 1..] {
                let subset: Vec<&Sample> = sorted.iter().filter(|s| s.class == pos || s.class == neg).collect();
                let xs: Vec<[f64; 2]> = subset.iter().map(|s| s.features).collect();
                let ys: Vec<f64> = subset.iter().map(|s| if s.class == pos { 1.0 } else { -1.0 }).collect();
                let sol = train_binary(&xs, &ys, params)?;
                audits.push(BinaryAudit {
                    positive: pos,
                    negative: neg,
                    kkt_violation: kkt_violation(&xs, &ys, &sol, params),
                    equality_residual: sol.alpha.iter().zip(&ys).map(|(a, y)| a * y).sum::<f64>().abs(),
                    alpha_in_box: sol.alpha.iter().all(|a| (0.0..=params.c).contains(a)),
                    iterations: sol.iterations,
                });
                let support = xs
                    .iter()
                    .zip(&ys)
                    .zip(&sol.alpha)
                    .filter(|(_, a)| **a > 0.0)
                    .map(|((x, y), a)| (*x, a * y))
                    .collect();
                classifiers.push(BinarySvc {
                    positive: pos,
                    negative: neg,
                    support,
                    rho: sol.rho,
                });
            }
        }
        Ok((
            Self {
                params: *params,
                classifiers,
            },
            audits,
        ))
    }

    pub fn params(&self) -> &SvcParams {
        &self.params
    }

    pub fn classifiers(&self) -> &[BinarySvc] {
        &self.classifiers
    }

    /// Majority vote of the pairwise classifiers; ties go to the class
    /// listed first in [`Verdict::ALL`].
    pub fn predict(&self, features: [f64; 2]) -> Verdict {
        let mut votes = [0usize; 3];
        for c in &self.classifiers {
            let winner = if c.decision(&self.params, &features) > 0.0 { c.positive } else { c.negative };
            votes[winner.index()] += 1;
        }
        let top = *votes.iter().max().unwrap();
        Verdict::ALL.into_iter().find(|v| votes[v.index()] == top).unwrap()
    }

    pub fn accuracy(&self, samples: &[Sample]) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        let right = samples.iter().filter(|s| self.predict(s.features) == s.class).count();
        right as f64 / samples.len() as f64
    }

    pub fn to_text(&self) -> String {
        let h = hexfloat::format;
        let mut s = String::from("svc-model 1\n");
        let p = &self.params;
        writeln!(s, "kernel polynomial {KERNEL_DEGREE} {} {}", h(p.gamma), h(p.coef0)).unwrap();
        writeln!(s, "cost {} {}", h(p.c), h(p.tolerance)).unwrap();
        for c in &self.classifiers {
            writeln!(s, "classifier {} {} {} {}", c.positive, c.negative, h(c.rho), c.support.len()).unwrap();
            for (x, coef) in &c.support {
                writeln!(s, "sv {} {} {}", h(x[0]), h(x[1]), h(*coef)).unwrap();
            }
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let num = |line: usize, tok: Option<&str>| -> Result<f64> {
            tok.and_then(hexfloat::parse)
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(line, "expected a finite number"))
        };
        let (line, header) = lines.next().ok_or_else(|| Error::parse(1, "empty SVC model file"))?;
        if header != "svc-model 1" {
            return Err(Error::parse(line, "expected `svc-model 1` header"));
        }
        let (line, kernel) = lines.next().ok_or_else(|| Error::parse(line + 1, "missing kernel line"))?;
        let mut t = kernel.split_whitespace();
        if t.next() != Some("kernel") || t.next() != Some("polynomial") || t.next() != Some("5") {
            return Err(Error::parse(line, "expected `kernel polynomial 5 <gamma> <coef0>`"));
        }
        let gamma = num(line, t.next())?;
        let coef0 = num(line, t.next())?;
        let (line, cost) = lines.next().ok_or_else(|| Error::parse(line + 1, "missing cost line"))?;
        let mut t = cost.split_whitespace();
        if t.next() != Some("cost") {
            return Err(Error::parse(line, "expected `cost <C> <tolerance>`"));
        }
        let params = SvcParams {
            c: num(line, t.next())?,
            tolerance: num(line, t.next())?,
            gamma,
            coef0,
        };
        let mut classifiers: Vec<BinarySvc> = Vec::new();
        let mut remaining = 0usize;
        let mut last = line;
        for (line, l) in lines {
            last = line;
            let mut t = l.split_whitespace();
            match t.next() {
                Some("classifier") if remaining == 0 => {
                    let pos: Verdict = t.next().unwrap_or("").parse().map_err(|_| Error::parse(line, "bad class name"))?;
                    let neg: Verdict = t.next().unwrap_or("").parse().map_err(|_| Error::parse(line, "bad class name"))?;
                    if pos >= neg {
                        return Err(Error::parse(line, "classifier classes out of order"));
                    }
                    let rho = num(line, t.next())?;
                    remaining = t
                        .next()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| Error::parse(line, "expected support vector count"))?;
                    classifiers.push(BinarySvc {
                        positive: pos,
                        negative: neg,
                        support: Vec::with_capacity(remaining),
                        rho,
                    });
                }
                Some("sv") if remaining > 0 => {
                    let x = [num(line, t.next())?, num(line, t.next())?];
                    let coef = num(line, t.next())?;
                    classifiers.last_mut().unwrap().support.push((x, coef));
                    remaining -= 1;
                }
                _ => return Err(Error::parse(line, format!("unexpected line `{l}`"))),
            }
        }
        if remaining > 0 {
            return Err(Error::parse(last, "truncated support vector list"));
        }
        if classifiers.is_empty() {
            return Err(Error::parse(last, "model has no classifiers"));
        }
        Ok(Self { params, classifiers })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Training samples as text: `<class> <mcs> <nu>` per line.
pub fn parse_samples(text: &str) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for (i, l) in text.lines().enumerate() {
        let l = l.split('#').next().unwrap_or("").trim();
        if l.is_empty() {
            continue;
        }
        let t: Vec<&str> = l.split_whitespace().collect();
        let parsed = (t.len() == 3).then(|| {
            let class = t[0].parse::<Verdict>().ok()?;
            let mcs = hexfloat::parse(t[1]).filter(|v| v.is_finite())?;
            let nu = hexfloat::parse(t[2]).filter(|v| v.is_finite())?;
            Some(Sample {
                features: [mcs, nu],
                class,
            })
        });
        out.push(parsed.flatten().ok_or_else(|| Error::parse(i + 1, "expected `<class> <mcs> <nu>`"))?);
    }
    Ok(out)
}

pub fn format_samples(samples: &[Sample]) -> String {
    samples
        .iter()
        .map(|s| format!("{} {} {}\n", s.class, hexfloat::format(s.features[0]), hexfloat::format(s.features[1])))
        .collect()
}
