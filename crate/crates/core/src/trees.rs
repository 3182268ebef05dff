//! The directed rooted trees `𝒜_N`: label sequences, their statistics and
//! the factorial-ratio coefficients.

use std::sync::OnceLock;

use num_rational::Ratio;

use crate::error::{domain, Error, Result};

/// Largest supported depth.
pub const MAX_DEPTH: usize = 8;

/// A branch `(i_1, …, i_N)`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Branch(Vec<usize>);

impl Branch {
    /// Validates the labels against the growth rule.
    pub fn new(labels: Vec<usize>) -> Result<Self> {
        let b = Branch(labels);
        branch_stats(&b)?;
        Ok(b)
    }

    pub fn labels(&self) -> &[usize] {
        &self.0
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    /// The branch with its last label removed.
    pub fn parent(&self) -> Option<Branch> {
        (self.0.len() > 1).then(|| Branch(self.0[..self.0.len() - 1].to_vec()))
    }
}

/// Per-branch counts: `ell[0] = ℓ_1 = #{i_τ = 1}`, `ell[r-1] = ℓ_r = #{i_τ = r} + 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BranchStats {
    pub ell: Vec<usize>,
    pub alpha: usize,
}

impl BranchStats {
    /// `ℓ_2, …, ℓ_α`: the slot orders contracted against `∂^{ℓ_1}`.
    pub fn slots(&self) -> &[usize] {
        &self.ell[1..]
    }
}

pub fn branch_stats(branch: &Branch) -> Result<BranchStats> {
    let labels = branch.labels();
    if labels.is_empty() {
        return Err(Error::InvalidBranch { position: 0, reason: "empty label sequence".into() });
    }
    let mut ones = 0usize;
    for (pos, &l) in labels.iter().enumerate() {
        let cap = ones + 1;
        if l == 0 || l > cap {
            return Err(Error::InvalidBranch {
                position: pos + 1,
                reason: format!("label {l} not in 1..={cap}"),
            });
        }
        if pos == 0 && l != 1 {
            return Err(Error::InvalidBranch { position: 1, reason: "first label must be 1".into() });
        }
        if l == 1 {
            ones += 1;
        }
    }
    let alpha = ones + 1;
    let mut ell = vec![1usize; alpha];
    ell[0] = ones;
    for &l in labels {
        if l >= 2 {
            ell[l - 1] += 1;
        }
    }
    Ok(BranchStats { ell, alpha })
}

/// All depth-`n` branches in lexicographic order.
pub fn enumerate_tree(n: usize) -> Result<Vec<Branch>> {
    if !(1..=MAX_DEPTH).contains(&n) {
        return Err(domain(format!("tree depth {n} outside 1..={MAX_DEPTH}")));
    }
    let mut level = vec![Branch(vec![1])];
    for _ in 1..n {
        let mut next = Vec::new();
        for b in &level {
            let alpha = b.0.iter().filter(|&&l| l == 1).count() + 1;
            for r in 1..=alpha {
                let mut labels = b.0.clone();
                labels.push(r);
                next.push(Branch(labels));
            }
        }
        level = next;
    }
    Ok(level)
}

fn factorial(k: usize) -> u64 {
    (1..=k as u64).product()
}

/// `c_{L,i} = ℓ_2! ⋯ ℓ_α! / L!`.
pub fn coefficient(l: usize, branch: &Branch) -> Result<Ratio<u64>> {
    if branch.depth() != l {
        return Err(domain(format!("branch of depth {} used at level {l}", branch.depth())));
    }
    let stats = branch_stats(branch)?;
    let num: u64 = stats.slots().iter().map(|&k| factorial(k)).product();
    Ok(Ratio::new(num, factorial(l)))
}

/// Branches of one depth with precomputed statistics and coefficients.
#[derive(Clone, Debug)]
pub struct TreeLevel {
    pub depth: usize,
    pub branches: Vec<Branch>,
    pub stats: Vec<BranchStats>,
    pub coefficients: Vec<Ratio<u64>>,
}

/// Cached [`TreeLevel`] for `1 ≤ n ≤ MAX_DEPTH`.
pub fn tree_level(n: usize) -> Result<&'static TreeLevel> {
    static LEVELS: OnceLock<Vec<TreeLevel>> = OnceLock::new();
    if !(1..=MAX_DEPTH).contains(&n) {
        return Err(domain(format!("tree depth {n} outside 1..={MAX_DEPTH}")));
    }
    let levels = LEVELS.get_or_init(|| {
        (1..=MAX_DEPTH)
            .map(|depth| {
                let branches = enumerate_tree(depth).expect("depth in range");
                let stats = branches.iter().map(|b| branch_stats(b).expect("generated branch")).collect();
                let coefficients =
                    branches.iter().map(|b| coefficient(depth, b).expect("generated branch")).collect();
                TreeLevel { depth, branches, stats, coefficients }
            })
            .collect()
    });
    Ok(&levels[n - 1])
}
