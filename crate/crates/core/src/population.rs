//! Users, populations and synthetic data.

use core::ops::Range;

use rand::distr::{Bernoulli, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::meta::MetaDistribution;
use crate::rng::RandomSource;
use crate::scalar::Scalar;

/// How many samples each user holds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum KProfile {
    Constant(u64),
    /// `k_i = ceil(n / i)`.
    PowerLaw,
    /// `floor(sqrt(n))` users hold `n` samples, the rest hold one.
    HeavyTail,
    Explicit(Vec<u64>),
}

impl KProfile {
    /// Sample counts for `n` users, sorted in descending order.
    pub fn resolve(&self, n: usize) -> Result<Vec<u64>> {
        if n == 0 {
            return Err(invalid("n", "population must be nonempty"));
        }
        let mut ks = match self {
            KProfile::Constant(k) => vec![*k; n],
            KProfile::PowerLaw => (1..=n as u64).map(|i| (n as u64).div_ceil(i)).collect(),
            KProfile::HeavyTail => {
                let heavy = isqrt(n);
                (0..n)
                    .map(|i| if i < heavy { n as u64 } else { 1 })
                    .collect()
            }
            KProfile::Explicit(list) => {
                if list.len() != n {
                    return Err(Error::ProfileLength {
                        expected: n,
                        got: list.len(),
                    });
                }
                list.clone()
            }
        };
        if ks.iter().any(|&k| k == 0) {
            return Err(invalid("k", "every user needs at least one sample"));
        }
        ks.sort_unstable_by(|a, b| b.cmp(a));
        Ok(ks)
    }
}

pub(crate) fn isqrt(n: usize) -> usize {
    let mut r = (n as f64).sqrt() as usize;
    while r * r > n {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= n {
        r += 1;
    }
    r
}

/// One user's binary samples.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct UserRecord {
    samples: Vec<bool>,
    ones: u64,
}

impl UserRecord {
    pub fn new(samples: Vec<bool>) -> Result<Self> {
        if samples.is_empty() {
            return Err(invalid("samples", "a user needs at least one sample"));
        }
        let ones = samples.iter().filter(|&&b| b).count() as u64;
        Ok(Self { samples, ones })
    }

    pub fn k(&self) -> u64 {
        self.samples.len() as u64
    }

    pub fn samples(&self) -> &[bool] {
        &self.samples
    }

    pub fn p_hat(&self) -> f64 {
        user_mean(self)
    }

    /// Mean of the first `min(m, k)` samples.
    pub fn prefix_mean(&self, m: u64) -> f64 {
        let m = m.clamp(1, self.k()) as usize;
        let ones = self.samples[..m].iter().filter(|&&b| b).count();
        ones as f64 / m as f64
    }
}

/// `(1/k) * sum of samples`; a single correctly rounded division.
pub fn user_mean(record: &UserRecord) -> f64 {
    record.ones as f64 / record.samples.len() as f64
}

/// Users sorted so that `k_1 >= k_2 >= ... >= k_n`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Population {
    users: Vec<UserRecord>,
}

impl Population {
    /// Sorts `users` by descending `k`; ties keep their input order.
    pub fn from_records(mut users: Vec<UserRecord>) -> Result<Self> {
        if users.is_empty() {
            return Err(Error::Empty("population"));
        }
        users.sort_by(|a, b| b.k().cmp(&a.k()));
        Ok(Self { users })
    }

    pub fn n(&self) -> usize {
        self.users.len()
    }

    pub fn users(&self) -> &[UserRecord] {
        &self.users
    }

    pub fn ks(&self) -> Vec<u64> {
        self.users.iter().map(UserRecord::k).collect()
    }

    pub fn p_hats(&self) -> Vec<f64> {
        self.users.iter().map(UserRecord::p_hat).collect()
    }

    /// Text form: `n=<n>` then one `k,b1,b2,...` line per user.
    pub fn to_text(&self) -> String {
        let total: usize = self.users.iter().map(|u| u.samples.len() * 2 + 8).sum();
        let mut out = String::with_capacity(total + 16);
        out.push_str(&format!("n={}\n", self.n()));
        for u in &self.users {
            out.push_str(&u.k().to_string());
            for &b in &u.samples {
                out.push(',');
                out.push(if b { '1' } else { '0' });
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Empty("population text"))?;
        let n: usize = header
            .strip_prefix("n=")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Parse {
                line: 1,
                reason: format!("expected `n=<count>`, found `{header}`"),
            })?;
        let mut users = Vec::with_capacity(n);
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let line_no = idx + 1;
            let mut fields = line.split(',');
            let k: usize = fields
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Parse {
                    line: line_no,
                    reason: "missing sample count".into(),
                })?;
            let samples = fields
                .map(|f| match f.trim() {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(Error::Parse {
                        line: line_no,
                        reason: format!("sample `{other}` is not 0 or 1"),
                    }),
                })
                .collect::<Result<Vec<bool>>>()?;
            if samples.len() != k {
                return Err(Error::Parse {
                    line: line_no,
                    reason: format!("declared k = {k} but found {} samples", samples.len()),
                });
            }
            users.push(UserRecord::new(samples).map_err(|e| Error::Parse {
                line: line_no,
                reason: e.to_string(),
            })?);
        }
        if users.len() != n {
            return Err(Error::Parse {
                line: 1,
                reason: format!("header declares {n} users but {} follow", users.len()),
            });
        }
        Self::from_records(users)
    }
}

/// True per-user means of a synthetic population, aligned with
/// [`Population::users`]. Only oracle estimators and tests read this.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub meta: MetaDistribution,
    pub p_i: Vec<f64>,
}

/// A synthetic population and the truth it was drawn from.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub population: Population,
    pub truth: Truth,
}

/// Draws `p_i ~ meta` and `k_i` i.i.d. Bernoulli(`p_i`) samples per user.
pub fn generate_population(
    meta: &MetaDistribution,
    profile: &KProfile,
    n: usize,
    source: RandomSource,
) -> Result<Synthetic> {
    let meta = meta.validated()?;
    let ks = profile.resolve(n)?;
    let mut rng = source.rng();
    let mut users = Vec::with_capacity(n);
    let mut p_i = Vec::with_capacity(n);
    for &k in &ks {
        let q = meta.sample(&mut rng);
        let coin = Bernoulli::new(q).expect("meta samples lie in [0, 1]");
        let samples: Vec<bool> = (0..k).map(|_| coin.sample(&mut rng)).collect();
        users.push(UserRecord::new(samples)?);
        p_i.push(q);
    }
    // `ks` is already sorted, so this keeps `p_i` aligned with the users.
    let population = Population::from_records(users)?;
    Ok(Synthetic {
        population,
        truth: Truth { meta, p_i },
    })
}

/// `Var(D(k)) = (1/k) p (1 - p) + (1 - 1/k) sigma_p^2`.
pub fn variance_of_dk<T: Scalar>(p: T, sigma_p2: T, k: u64) -> Result<T> {
    let zero = T::zero();
    let one = T::one();
    if !(p >= zero && p <= one) {
        return Err(invalid("p", format!("must lie in [0, 1], got {p}")));
    }
    if k == 0 {
        return Err(invalid("k", "must be at least 1"));
    }
    let bound = p * (one - p);
    if !(sigma_p2 >= zero) || sigma_p2 > bound + T::epsilon() {
        return Err(Error::VarianceTooLarge {
            sigma_p2: sigma_p2.as_f64(),
            bound: bound.as_f64(),
        });
    }
    let inv_k = one / T::count(k);
    Ok(inv_k * bound + (one - inv_k) * sigma_p2)
}

/// Index ranges of the three disjoint user groups used by the estimators.
///
/// With users sorted by descending `k`: `top` is the first `L` users, `bottom`
/// the last `floor(n/10)`, and `middle` everything in between.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Groups {
    pub top: Range<usize>,
    pub middle: Range<usize>,
    pub bottom: Range<usize>,
}

impl Groups {
    pub fn new(n: usize, top_size: usize) -> Result<Self> {
        let bottom_size = n / 10;
        if bottom_size == 0 {
            return Err(Error::InfeasibleGroups {
                n,
                reason: "the bottom decile is empty (need n >= 10)".into(),
            });
        }
        let middle_end = n - bottom_size;
        if top_size >= middle_end {
            return Err(Error::InfeasibleGroups {
                n,
                reason: format!("top group of {top_size} leaves no middle group"),
            });
        }
        Ok(Self {
            top: 0..top_size,
            middle: top_size..middle_end,
            bottom: middle_end..n,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn user_mean_examples() {
        let r = |bits: &[u8]| UserRecord::new(bits.iter().map(|&b| b == 1).collect()).unwrap();
        assert_eq!(user_mean(&r(&[1, 0, 1, 0])), 0.5);
        assert_eq!(user_mean(&r(&[0])), 0.0);
        assert_eq!(user_mean(&r(&[1, 1, 1, 1, 1, 1, 1, 0, 0, 0])), 0.7);
        assert!(UserRecord::new(vec![]).is_err());
    }

    #[test]
    fn profiles_resolve() {
        assert_eq!(KProfile::PowerLaw.resolve(5).unwrap(), vec![5, 3, 2, 2, 1]);
        assert_eq!(KProfile::HeavyTail.resolve(10).unwrap(), vec![10, 10, 10, 1, 1, 1, 1, 1, 1, 1]);
        assert_eq!(KProfile::Explicit(vec![1, 4, 2]).resolve(3).unwrap(), vec![4, 2, 1]);
        assert!(matches!(
            KProfile::Explicit(vec![1, 2]).resolve(3),
            Err(Error::ProfileLength { expected: 3, got: 2 })
        ));
        assert!(KProfile::Constant(0).resolve(3).is_err());
    }

    #[test]
    fn point_mass_one_gives_all_ones() {
        let meta = MetaDistribution::point_mass(1.0).unwrap();
        let s = generate_population(&meta, &KProfile::Constant(5), 3, RandomSource::new(0, 0)).unwrap();
        for u in s.population.users() {
            assert!(u.samples().iter().all(|&b| b));
            assert_eq!(u.p_hat(), 1.0);
        }
    }

    #[test]
    fn text_round_trip() {
        let meta = MetaDistribution::two_point(0.4, 0.1).unwrap();
        let s = generate_population(&meta, &KProfile::PowerLaw, 12, RandomSource::new(3, 1)).unwrap();
        let text = s.population.to_text();
        assert!(text.starts_with("n=12\n"));
        assert_eq!(Population::from_text(&text).unwrap(), s.population);
        assert!(Population::from_text("n=2\n1,1\n").is_err());
        assert!(Population::from_text("n=1\n2,1\n").is_err());
        assert!(Population::from_text("n=1\n1,2\n").is_err());
    }

    #[test]
    fn variance_law_closed_form() {
        assert_eq!(variance_of_dk(0.5, 0.0, 1).unwrap(), 0.25);
        let v: f64 = variance_of_dk(0.3, 0.004, 10).unwrap();
        assert!((v - (0.021 + 0.9 * 0.004)).abs() < 1e-15);
        let v32: f32 = variance_of_dk(0.3f32, 0.004, 10).unwrap();
        assert!((f64::from(v32) - v).abs() < 1e-7);
        let big: f64 = variance_of_dk(0.5, 0.01, 1 << 40).unwrap();
        assert!((big - 0.01).abs() < 1e-12);
        assert!(variance_of_dk(0.5, 0.3, 3).is_err());
        assert!(variance_of_dk(1.5, 0.0, 3).is_err());
    }

    #[test]
    fn groups_partition() {
        let g = Groups::new(100, 7).unwrap();
        assert_eq!(g.top, 0..7);
        assert_eq!(g.middle, 7..90);
        assert_eq!(g.bottom, 90..100);
        assert!(Groups::new(9, 0).is_err());
        assert!(Groups::new(20, 18).is_err());
    }
}
