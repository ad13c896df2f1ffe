//! Substitution matrices and the trees they generate.
//!
//! A label `k` vertex has exactly `M[k][l]` forward neighbours of label `l`.
//! Children are always emitted in canonical order: all label-0 children
//! first, then label 1, and so on. Every derived structure (trees, cherry
//! spheres, permutation lists) inherits that order, so runs are reproducible.

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap for [`grow_tree`].
pub const DEFAULT_VERTEX_CAP: usize = 1 << 23;

/// Default cap for [`enumerate_permutations`] (10!).
pub const DEFAULT_PERMUTATION_CAP: usize = 3_628_800;

/// Which of the (M0), (M1), (M1*), (M2) conditions a matrix satisfies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub m0: bool,
    pub m1: bool,
    pub m1star: bool,
    pub m2: bool,
}

impl ValidationReport {
    /// The conditions needed by the stability machinery: (M0), (M1*), (M2).
    pub fn admissible(&self) -> bool {
        self.m0 && self.m1star && self.m2
    }

    /// Human readable list of violated conditions.
    pub fn violations(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.m0 {
            out.push("(M0) violated: a single label needs M >= 2");
        }
        if !self.m1 {
            out.push("(M1) not satisfied: some diagonal entry is zero");
        }
        if !self.m1star {
            out.push("(M1*) violated: some label has no diagonal witness");
        }
        if !self.m2 {
            out.push("(M2) violated: matrix is not irreducible");
        }
        out
    }
}

/// A substitution matrix together with its label-invariant potential.
#[derive(Debug, Clone, PartialEq)]
pub struct SubstitutionModel {
    alphabet: Vec<String>,
    matrix: Vec<Vec<u32>>,
    v_per: Vec<f64>,
    root_label: usize,
    report: ValidationReport,
}

impl SubstitutionModel {
    /// Builds a model with labels named `"0"`, `"1"`, ...
    ///
    /// Only the shape is checked here; the (M*) conditions are recorded in
    /// [`SubstitutionModel::report`] and enforced by the operations that need
    /// them.
    pub fn new(matrix: Vec<Vec<u32>>, v_per: Vec<f64>, root_label: usize) -> Result<Self> {
        let alphabet = (0..matrix.len()).map(|k| k.to_string()).collect();
        Self::with_alphabet(alphabet, matrix, v_per, root_label)
    }

    pub fn with_alphabet(
        alphabet: Vec<String>,
        matrix: Vec<Vec<u32>>,
        v_per: Vec<f64>,
        root_label: usize,
    ) -> Result<Self> {
        let n = matrix.len();
        if n == 0 {
            return Err(Error::InvalidModel("empty alphabet".into()));
        }
        if alphabet.len() != n {
            return Err(Error::InvalidModel(format!(
                "alphabet has {} names for a {n}x{n} matrix",
                alphabet.len()
            )));
        }
        if alphabet.iter().unique().count() != n {
            return Err(Error::InvalidModel("duplicate label names".into()));
        }
        if let Some(row) = matrix.iter().position(|r| r.len() != n) {
            return Err(Error::InvalidModel(format!(
                "row {row} has {} entries, expected {n}",
                matrix[row].len()
            )));
        }
        if v_per.len() != n {
            return Err(Error::InvalidModel(format!(
                "v_per has {} entries, expected {n}",
                v_per.len()
            )));
        }
        if v_per.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("v_per must be finite".into()));
        }
        if root_label >= n {
            return Err(Error::InvalidModel(format!(
                "root label {root_label} out of range"
            )));
        }
        let report = validate_matrix(&matrix);
        Ok(Self {
            alphabet,
            matrix,
            v_per,
            root_label,
            report,
        })
    }

    /// Single-label model `M = [[k]]` with constant potential `v`.
    pub fn regular(k: u32, v: f64) -> Result<Self> {
        Self::new(vec![vec![k]], vec![v], 0)
    }

    pub fn alphabet_size(&self) -> usize {
        self.matrix.len()
    }

    pub fn alphabet(&self) -> &[String] {
        &self.alphabet
    }

    pub fn matrix(&self) -> &[Vec<u32>] {
        &self.matrix
    }

    pub fn entry(&self, k: usize, l: usize) -> u32 {
        self.matrix[k][l]
    }

    pub fn v_per(&self) -> &[f64] {
        &self.v_per
    }

    pub fn root_label(&self) -> usize {
        self.root_label
    }

    pub fn report(&self) -> ValidationReport {
        self.report
    }

    pub fn row_sum(&self, k: usize) -> u64 {
        self.matrix[k].iter().map(|&m| u64::from(m)).sum()
    }

    pub fn max_row_sum(&self) -> u64 {
        (0..self.alphabet_size())
            .map(|k| self.row_sum(k))
            .max()
            .unwrap_or(0)
    }

    /// Crude operator norm bound: maximal degree plus maximal |v^per|.
    pub fn norm_bound(&self) -> f64 {
        let vmax = self.v_per.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        self.max_row_sum() as f64 + 1.0 + vmax
    }

    /// Labels of the children of a label-`k` vertex in canonical order.
    pub fn child_labels(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        self.matrix[k]
            .iter()
            .enumerate()
            .flat_map(|(l, &m)| std::iter::repeat_n(l, m as usize))
    }

    pub fn label_index(&self, name: &str) -> Option<usize> {
        self.alphabet.iter().position(|a| a == name)
    }

    fn require_admissible(&self) -> Result<()> {
        if !self.report.m0 {
            return Err(Error::InvalidModel("(M0) violated".into()));
        }
        Ok(())
    }
}

/// Computes the (M0), (M1), (M1*), (M2) flags of a square matrix.
pub fn validate_matrix(matrix: &[Vec<u32>]) -> ValidationReport {
    let n = matrix.len();
    let m0 = n != 1 || matrix[0][0] >= 2;
    let m1 = (0..n).all(|k| matrix[k][k] >= 1);
    let m1star = (0..n).all(|k| m1star_witness(matrix, k).is_some());
    let m2 = irreducible(matrix);
    ValidationReport { m0, m1, m1star, m2 }
}

/// Validation of a model, as a free function.
pub fn validate(model: &SubstitutionModel) -> ValidationReport {
    validate_matrix(&model.matrix)
}

fn m1star_witness(matrix: &[Vec<u32>], k: usize) -> Option<usize> {
    let n = matrix.len();
    (0..n).find(|&kp| {
        matrix[k][kp] >= 1 && (0..n).all(|l| matrix[k][l] == 0 || matrix[kp][l] >= 1)
    })
}

// (M^n)_{k,l} >= 1 for some 1 <= n <= |A|, via boolean closure.
fn irreducible(matrix: &[Vec<u32>]) -> bool {
    let n = matrix.len();
    let step: Vec<Vec<bool>> = matrix
        .iter()
        .map(|row| row.iter().map(|&m| m >= 1).collect())
        .collect();
    let mut reach = step.clone();
    let mut power = step.clone();
    for _ in 1..n {
        let next: Vec<Vec<bool>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (0..n).any(|m| power[i][m] && step[m][j]))
                    .collect()
            })
            .collect();
        for i in 0..n {
            for j in 0..n {
                reach[i][j] |= next[i][j];
            }
        }
        power = next;
    }
    reach.iter().all(|row| row.iter().all(|&b| b))
}

/// Picks the distinguished forward neighbour label `k'` of a label-`k`
/// vertex: the smallest index whose row support covers the support of row `k`.
pub fn choose_o_prime(model: &SubstitutionModel, k: usize) -> Result<usize> {
    m1star_witness(&model.matrix, k).ok_or(Error::NoM1StarWitness { label: k })
}

/// One vertex of a [`LabeledTree`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Vertex {
    pub label: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    first_child: usize,
    child_count: usize,
}

impl Vertex {
    pub fn children(&self) -> std::ops::Range<usize> {
        self.first_child..self.first_child + self.child_count
    }

    pub fn is_leaf(&self) -> bool {
        self.child_count == 0
    }
}

/// Finite-depth tree, stored breadth first. Vertex id 0 is the root and the
/// children of every vertex occupy a contiguous id range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledTree {
    depth: usize,
    vertices: Vec<Vertex>,
}

impl LabeledTree {
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn vertex(&self, id: usize) -> &Vertex {
        &self.vertices[id]
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn label(&self, id: usize) -> usize {
        self.vertices[id].label
    }

    /// Path from the root to `id`, both included.
    pub fn path_from_root(&self, id: usize) -> Vec<usize> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.vertices[cur].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// True if `anc` lies on the path from the root to `id` (inclusive).
    pub fn is_ancestor(&self, anc: usize, id: usize) -> bool {
        let mut cur = Some(id);
        while let Some(c) = cur {
            if c == anc {
                return true;
            }
            cur = self.vertices[c].parent;
        }
        false
    }

    /// Ids of all vertices at the given depth.
    pub fn level(&self, depth: usize) -> impl Iterator<Item = usize> + '_ {
        self.vertices
            .iter()
            .enumerate()
            .filter(move |(_, v)| v.depth == depth)
            .map(|(i, _)| i)
    }
}

/// Number of vertices of the depth-`depth` tree with the given root label,
/// from repeated application of `M` to the root indicator.
pub fn analytic_vertex_count(model: &SubstitutionModel, root_label: usize, depth: usize) -> u128 {
    let n = model.alphabet_size();
    let mut level = vec![0u128; n];
    level[root_label] = 1;
    let mut total: u128 = 1;
    for _ in 0..depth {
        let mut next = vec![0u128; n];
        for (k, &count) in level.iter().enumerate() {
            if count == 0 {
                continue;
            }
            for (l, &m) in model.matrix[k].iter().enumerate() {
                next[l] = next[l].saturating_add(count.saturating_mul(u128::from(m)));
            }
        }
        total = total.saturating_add(next.iter().fold(0u128, |a, &b| a.saturating_add(b)));
        level = next;
    }
    total
}

/// Grows the labelled tree of the given depth with the default vertex cap.
pub fn grow_tree(model: &SubstitutionModel, root_label: usize, depth: usize) -> Result<LabeledTree> {
    grow_tree_capped(model, root_label, depth, DEFAULT_VERTEX_CAP)
}

pub fn grow_tree_capped(
    model: &SubstitutionModel,
    root_label: usize,
    depth: usize,
    cap: usize,
) -> Result<LabeledTree> {
    grow_tree_ordered(model, root_label, depth, cap, ChildOrder::Canonical)
}

/// Order in which children of each vertex are laid out.
///
/// Only [`ChildOrder::Canonical`] is used by the public operations; the
/// reversed order exists so estimators can be checked for invariance under
/// relabelling of same-label subtrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChildOrder {
    #[default]
    Canonical,
    Reversed,
}

pub fn grow_tree_ordered(
    model: &SubstitutionModel,
    root_label: usize,
    depth: usize,
    cap: usize,
    order: ChildOrder,
) -> Result<LabeledTree> {
    if root_label >= model.alphabet_size() {
        return Err(Error::InvalidModel(format!("root label {root_label} out of range")));
    }
    let count = analytic_vertex_count(model, root_label, depth);
    if count > cap as u128 {
        return Err(Error::SizeLimit {
            requested: count,
            cap,
        });
    }
    let mut vertices = Vec::with_capacity(count as usize);
    vertices.push(Vertex {
        label: root_label,
        parent: None,
        depth: 0,
        first_child: 0,
        child_count: 0,
    });
    let mut head = 0;
    while head < vertices.len() {
        let v = vertices[head];
        if v.depth < depth {
            let mut labels: Vec<usize> = model.child_labels(v.label).collect();
            if order == ChildOrder::Reversed {
                labels.reverse();
            }
            let first = vertices.len();
            for l in labels {
                vertices.push(Vertex {
                    label: l,
                    parent: Some(head),
                    depth: v.depth + 1,
                    first_child: 0,
                    child_count: 0,
                });
            }
            vertices[head].first_child = first;
            vertices[head].child_count = vertices.len() - first;
        } else {
            vertices[head].first_child = vertices.len();
        }
        head += 1;
    }
    Ok(LabeledTree { depth, vertices })
}

/// Which half of the cherry sphere a slot belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Half {
    /// A child of `o` other than `o'`.
    Outer,
    /// A child of `o'`.
    Inner,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Slot {
    pub label: usize,
    pub half: Half,
}

/// The vertex set `S_{o,o'}`: the children of `o'` together with the
/// remaining children of `o`. Outer slots come first, then inner slots, each
/// in canonical child order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CherrySphere {
    pub o_label: usize,
    pub o_prime_label: usize,
    pub members: Vec<Slot>,
}

impl CherrySphere {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.members.iter().map(|s| s.label).collect()
    }

    pub fn outer(&self) -> impl Iterator<Item = usize> + '_ {
        self.members
            .iter()
            .enumerate()
            .filter(|(_, s)| s.half == Half::Outer)
            .map(|(i, _)| i)
    }

    pub fn inner(&self) -> impl Iterator<Item = usize> + '_ {
        self.members
            .iter()
            .enumerate()
            .filter(|(_, s)| s.half == Half::Inner)
            .map(|(i, _)| i)
    }

    pub fn outer_len(&self) -> usize {
        self.outer().count()
    }

    pub fn inner_len(&self) -> usize {
        self.inner().count()
    }
}

pub fn cherry_sphere(model: &SubstitutionModel, k: usize) -> Result<CherrySphere> {
    model.require_admissible()?;
    let kp = choose_o_prime(model, k)?;
    let mut members = Vec::new();
    let mut skipped = false;
    for l in model.child_labels(k) {
        if l == kp && !skipped {
            skipped = true;
            continue;
        }
        members.push(Slot {
            label: l,
            half: Half::Outer,
        });
    }
    for l in model.child_labels(kp) {
        members.push(Slot {
            label: l,
            half: Half::Inner,
        });
    }
    Ok(CherrySphere {
        o_label: k,
        o_prime_label: kp,
        members,
    })
}

/// A label-preserving bijection of cherry-sphere slots; `mapping[x] = π(x)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct LabelPermutation {
    pub mapping: Vec<usize>,
}

impl LabelPermutation {
    pub fn identity(n: usize) -> Self {
        Self {
            mapping: (0..n).collect(),
        }
    }

    pub fn apply(&self, x: usize) -> usize {
        self.mapping[x]
    }

    /// `(self ∘ other)(x) = self(other(x))`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            mapping: other.mapping.iter().map(|&y| self.mapping[y]).collect(),
        }
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.mapping.len()];
        for (x, &y) in self.mapping.iter().enumerate() {
            inv[y] = x;
        }
        Self { mapping: inv }
    }
}

fn factorial(n: usize) -> u128 {
    (1..=n as u128).fold(1u128, |a, b| a.saturating_mul(b))
}

/// Number of label-invariant permutations, `Π_k m_k!`.
pub fn permutation_count(sphere: &CherrySphere) -> u128 {
    sphere
        .labels()
        .into_iter()
        .counts()
        .values()
        .fold(1u128, |a, &m| a.saturating_mul(factorial(m)))
}

pub fn enumerate_permutations(sphere: &CherrySphere) -> Result<Vec<LabelPermutation>> {
    enumerate_permutations_capped(sphere, DEFAULT_PERMUTATION_CAP)
}

pub fn enumerate_permutations_capped(
    sphere: &CherrySphere,
    cap: usize,
) -> Result<Vec<LabelPermutation>> {
    let count = permutation_count(sphere);
    if count > cap as u128 {
        return Err(Error::PermutationLimit { count, cap });
    }
    let n = sphere.len();
    let labels = sphere.labels();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for l in labels.iter().copied().unique().sorted() {
        groups.push((0..n).filter(|&x| labels[x] == l).collect());
    }
    if groups.is_empty() {
        return Ok(vec![LabelPermutation::identity(0)]);
    }
    let per_group: Vec<Vec<Vec<usize>>> = groups
        .iter()
        .map(|g| g.iter().copied().permutations(g.len()).collect())
        .collect();
    let mut out = Vec::with_capacity(count as usize);
    for choice in per_group.iter().map(|p| p.iter()).multi_cartesian_product() {
        let mut mapping = vec![0; n];
        for (group, images) in groups.iter().zip(choice) {
            for (&x, &y) in group.iter().zip(images.iter()) {
                mapping[x] = y;
            }
        }
        out.push(LabelPermutation { mapping });
    }
    Ok(out)
}
