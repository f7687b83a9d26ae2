//! The four applications: sinks of a randomly oriented hypercube, the
//! birthday problem, monochromatic edges of a random colouring and triangles
//! of `G(n, p)`.
//!
//! Each model comes as a [`DependenceInstance`] (for enumeration and the
//! structural quantities), a fast direct sampler, and [`ModelAnalytics`]
//! holding the published closed forms next to exact values computed here.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cumulants::{
    select_family, solve_family, solve_triplepois, CumulantTriple, Family, FamilyChoice, DEFAULT_RHO0,
};
use crate::distributions::{BinPoisParams, FamilyParams};
use crate::error::{Error, Result};
use crate::localdep::{DependenceInstance, Rule, SourceLaw, Variable};
use crate::par::{map_indexed, tree_reduce};
use crate::rng::stream_rng;

/// Simple undirected graph on vertices `0..n`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    vertices: usize,
    edges: Vec<(usize, usize)>,
}

impl Graph {
    /// Edges are stored as `(min, max)`; loops and repeated edges are rejected.
    pub fn new(vertices: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        let mut out = Vec::with_capacity(edges.len());
        for (u, v) in edges {
            if u >= vertices || v >= vertices {
                return Err(Error::input(format!("edge ({u}, {v}) refers to a vertex >= {vertices}")));
            }
            if u == v {
                return Err(Error::input(format!("self-loop at vertex {u}")));
            }
            let e = (u.min(v), u.max(v));
            if !seen.insert(e) {
                return Err(Error::input(format!("repeated edge ({}, {})", e.0, e.1)));
            }
            out.push(e);
        }
        Ok(Graph { vertices, edges: out })
    }

    /// Parses one `u v` pair per line (0-based ids). Blank lines and text
    /// after `#` are ignored. The vertex count is one more than the largest id.
    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut edges = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let ids: Vec<&str> = line.split_whitespace().collect();
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::input(format!("line {}: {s:?} is not a vertex id", lineno + 1)))
            };
            if ids.len() != 2 {
                return Err(Error::input(format!(
                    "line {}: expected two vertex ids, found {:?}",
                    lineno + 1,
                    line
                )));
            }
            edges.push((parse(ids[0])?, parse(ids[1])?));
        }
        let vertices = edges.iter().map(|&(u, v)| u.max(v) + 1).max().unwrap_or(0);
        Graph::new(vertices, edges)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::input(format!("cannot read {}: {e}", path.display())))?;
        Graph::parse_edge_list(&text)
    }

    pub fn to_edge_list(&self) -> String {
        self.edges.iter().map(|(u, v)| format!("{u} {v}\n")).collect()
    }

    pub fn complete(n: usize) -> Self {
        let edges = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
        Graph { vertices: n, edges }
    }

    pub fn path(edges: usize) -> Self {
        Graph {
            vertices: edges + 1,
            edges: (0..edges).map(|u| (u, u + 1)).collect(),
        }
    }

    /// The seven-vertex, eleven-edge example graph `a..g`.
    pub fn example_seven() -> Self {
        let edges = vec![
            (0, 1),
            (1, 2),
            (2, 3),
            (3, 4),
            (0, 4),
            (0, 5),
            (2, 5),
            (4, 5),
            (1, 4),
            (1, 5),
            (1, 6),
        ];
        Graph::new(7, edges).expect("valid graph")
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for a in &mut adj {
            a.sort_unstable();
        }
        adj
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency().iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn triangle_count(&self) -> u64 {
        count_triangles(&self.adjacency())
    }
}

/// Triangles in a graph given by sorted adjacency lists, each counted once
/// as `u < v < w`.
fn count_triangles(adj: &[Vec<usize>]) -> u64 {
    let mut total = 0u64;
    for (u, nu) in adj.iter().enumerate() {
        for &v in nu.iter().filter(|&&v| v > u) {
            let nv = &adj[v];
            let (mut i, mut j) = (0, 0);
            while i < nu.len() && j < nv.len() {
                match nu[i].cmp(&nv[j]) {
                    std::cmp::Ordering::Less => i += 1,
                    std::cmp::Ordering::Greater => j += 1,
                    std::cmp::Ordering::Equal => {
                        if nu[i] > v {
                            total += 1;
                        }
                        i += 1;
                        j += 1;
                    }
                }
            }
        }
    }
    total
}

/// One of the four applications with its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelSpec {
    Hypercube { d: u32 },
    Birthday { n: u32, k: u32, d: u64 },
    MonoEdges { graph: Graph, c: u32 },
    Triangles { n: u32, p: f64 },
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Hypercube { d } => {
                if !(2..=24).contains(d) {
                    return Err(Error::param(format!("hypercube needs 2 <= d <= 24, got {d}")));
                }
            }
            ModelSpec::Birthday { n, k, d } => {
                if *k < 2 || *d < 2 {
                    return Err(Error::param(format!("birthday needs k >= 2 and d >= 2, got k={k}, d={d}")));
                }
                if n < k {
                    return Err(Error::param(format!("birthday needs n >= k, got n={n}, k={k}")));
                }
            }
            ModelSpec::MonoEdges { graph, c } => {
                if *c < 2 {
                    return Err(Error::param(format!("colouring needs c >= 2 colours, got {c}")));
                }
                if graph.num_edges() == 0 {
                    return Err(Error::param("graph has no edges"));
                }
            }
            ModelSpec::Triangles { n, p } => {
                if *n < 3 {
                    return Err(Error::param(format!("triangle model needs n >= 3, got {n}")));
                }
                if !(*p > 0.0 && *p <= 1.0) {
                    return Err(Error::param(format!("edge probability p={p} must lie in (0,1]")));
                }
            }
        }
        Ok(())
    }

    /// Short identifier used in file names and CSV rows.
    pub fn id(&self) -> String {
        match self {
            ModelSpec::Hypercube { d } => format!("hypercube(d={d})"),
            ModelSpec::Birthday { n, k, d } => format!("birthday(n={n},k={k},d={d})"),
            ModelSpec::MonoEdges { graph, c } => {
                format!("mono_edges(v={},m={},c={c})", graph.num_vertices(), graph.num_edges())
            }
            ModelSpec::Triangles { n, p } => format!("triangles(n={n},p={p})"),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Hypercube { .. } => "hypercube",
            ModelSpec::Birthday { .. } => "birthday",
            ModelSpec::MonoEdges { .. } => "mono_edges",
            ModelSpec::Triangles { .. } => "triangles",
        }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

/// A published closed form that disagrees with the exact value.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Discrepancy {
    pub quantity: String,
    pub formula: f64,
    pub exact: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelAnalytics {
    pub model: ModelSpec,
    /// Published closed form; some entries are only asymptotic (see `approximate`).
    pub cumulants_formula: CumulantTriple,
    /// Which entries of `cumulants_formula` are leading-order approximations.
    pub approximate: Vec<String>,
    /// Exact cumulants (closed form derived here, cross-checked by enumeration).
    pub cumulants_exact: CumulantTriple,
    /// Approximants used by the published parameter choice (birthday only).
    pub cumulants_tilde: Option<CumulantTriple>,
    /// `select_family` on the published cumulants.
    pub recommended_family: FamilyChoice,
    /// `select_family` on the exact cumulants.
    pub exact_family: FamilyChoice,
    /// The explicit parameter choice made in the published analysis, if feasible.
    pub published_params: Option<FamilyParams>,
    /// Exact three-cumulant match of the recommended family on the published cumulants.
    pub formula_matched_params: Option<FamilyParams>,
    /// Exact three-cumulant match of `exact_family` on the exact cumulants.
    pub matched_params: Option<FamilyParams>,
    pub discrepancies: Vec<Discrepancy>,
    /// Plug-in order of `S(W)` at scale, when one is published.
    pub s_w_plugin: Option<f64>,
    /// Value of the published convergence rate (constants omitted).
    pub rate: f64,
    pub rate_formula: String,
}

impl ModelAnalytics {
    /// Cumulants used for computations: always the exact ones.
    pub fn cumulants(&self) -> CumulantTriple {
        self.cumulants_exact
    }

    pub fn has_discrepancy(&self) -> bool {
        !self.discrepancies.is_empty()
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        model: ModelSpec,
        formula: CumulantTriple,
        approximate: Vec<String>,
        exact: CumulantTriple,
        tilde: Option<CumulantTriple>,
        published_params: Option<FamilyParams>,
        s_w_plugin: Option<f64>,
        rate: f64,
        rate_formula: String,
    ) -> Result<Self> {
        let recommended_family = select_family(&formula, DEFAULT_RHO0)?;
        let exact_family = select_family(&exact, DEFAULT_RHO0)?;
        let formula_matched_params = solve_family(recommended_family.family, &formula, formula.g1).ok();
        let matched_params = solve_family(exact_family.family, &exact, exact.g1).ok();
        let mut discrepancies = Vec::new();
        for (name, f, e) in [
            ("Gamma_1", formula.g1, exact.g1),
            ("Gamma_2", formula.g2, exact.g2),
            ("Gamma_3", formula.g3, exact.g3),
        ] {
            let asymptotic = approximate.iter().any(|a| a == name);
            if !asymptotic && (f - e).abs() > 1e-9 * e.abs().max(1.0) {
                discrepancies.push(Discrepancy {
                    quantity: name.to_string(),
                    formula: f,
                    exact: e,
                });
            }
        }
        Ok(ModelAnalytics {
            model,
            cumulants_formula: formula,
            approximate,
            cumulants_exact: exact,
            cumulants_tilde: tilde,
            recommended_family,
            exact_family,
            published_params,
            formula_matched_params,
            matched_params,
            discrepancies,
            s_w_plugin,
            rate,
            rate_formula,
        })
    }
}

pub(crate) fn binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn factorial(n: u64) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// Factorial cumulants from factorial moments `E (W)_1, E (W)_2, E (W)_3`.
fn from_factorial_moments(f1: f64, f2: f64, f3: f64) -> CumulantTriple {
    CumulantTriple::new(f1, f2 - f1 * f1, f3 - 3.0 * f1 * f2 + 2.0 * f1.powi(3))
}

// ---------------------------------------------------------------- hypercube

/// Sources are the `d 2^(d-1)` edges; source value 1 means the edge points
/// to its endpoint with the larger label. Vertex `v` is a sink when every
/// incident edge points to it.
pub fn build_hypercube(d: u32) -> Result<(DependenceInstance, ModelAnalytics)> {
    let spec = ModelSpec::Hypercube { d };
    spec.validate()?;
    let n = 1usize << d;
    let half = n / 2;
    // edge (lower vertex v with bit b clear, b) -> b * half + (v with bit b squeezed out)
    let edge_id = |v: usize, b: u32| {
        let low = v & ((1 << b) - 1);
        let high = (v >> (b + 1)) << b;
        b as usize * half + (high | low)
    };
    let sources = vec![SourceLaw::uniform(2)?; d as usize * half];
    let variables = (0..n)
        .map(|v| {
            let srcs = (0..d).map(|b| edge_id(v & !(1 << b), b)).collect();
            let targets = (0..d).map(|b| ((v >> b) & 1) as i64).collect();
            Variable::new(srcs, Rule::Match { targets })
        })
        .collect::<Result<Vec<_>>>()?;
    let inst = DependenceInstance::new(spec.id(), sources, variables)?;
    Ok((inst, hypercube_analytics(d)?))
}

/// Published values `(1, (d-1) 2^-d, (3d^2+3d+2) 2^(-2d+1))`.
pub fn hypercube_formula(d: u32) -> CumulantTriple {
    let d = d as f64;
    CumulantTriple::new(
        1.0,
        (d - 1.0) * 2f64.powf(-d),
        (3.0 * d * d + 3.0 * d + 2.0) * 2f64.powf(-2.0 * d + 1.0),
    )
}

/// Exact cumulants. Two sinks cannot be adjacent; non-adjacent sinks are
/// independent unless they share neighbours, which only changes which
/// orientations are forced, never their number. So
/// `P(u, v sinks) = 2^-2d` for non-adjacent pairs and likewise for triples of
/// pairwise non-adjacent vertices.
pub fn hypercube_exact(d: u32) -> CumulantTriple {
    let n = (1u64 << d) as f64;
    let dd = d as f64;
    let at_distance_two = binomial(d as u64, 2);
    let f2 = n * (n - 1.0 - dd) * 2f64.powf(-2.0 * dd);
    // A third vertex must avoid both closed neighbourhoods, which overlap in
    // two vertices at distance 2 and not at all further apart.
    let third_after_dist2 = n - 2.0 * dd;
    let third_after_far = n - 2.0 * dd - 2.0;
    let f3 = n
        * (at_distance_two * third_after_dist2 + (n - 1.0 - dd - at_distance_two) * third_after_far)
        * 2f64.powf(-3.0 * dd);
    from_factorial_moments(1.0, f2, f3)
}

fn hypercube_analytics(d: u32) -> Result<ModelAnalytics> {
    let formula = hypercube_formula(d);
    let published_params = solve_triplepois(&formula).ok().map(FamilyParams::M3);
    let dd = d as f64;
    ModelAnalytics::assemble(
        ModelSpec::Hypercube { d },
        formula,
        Vec::new(),
        hypercube_exact(d),
        None,
        published_params,
        None,
        dd.powi(3) * 2f64.powf(-3.0 * dd),
        "d^3 2^(-3d)".to_string(),
    )
}

// ----------------------------------------------------------------- birthday

/// `n` balls in `d` boxes; one indicator per `k`-subset of balls that share a box.
pub fn build_birthday(n: u32, k: u32, d: u64) -> Result<(DependenceInstance, ModelAnalytics)> {
    let spec = ModelSpec::Birthday { n, k, d };
    spec.validate()?;
    let size = u32::try_from(d).map_err(|_| Error::param(format!("d={d} too large for an enumerable instance")))?;
    let subsets = binomial(n as u64, k as u64);
    if subsets > 5e6 {
        return Err(Error::param(format!("C({n},{k}) = {subsets} subsets is too many variables")));
    }
    let sources = vec![SourceLaw::uniform(size)?; n as usize];
    let variables = k_subsets(n as usize, k as usize)
        .into_iter()
        .map(|s| Variable::new(s, Rule::AllEqual))
        .collect::<Result<Vec<_>>>()?;
    let inst = DependenceInstance::new(spec.id(), sources, variables)?;
    Ok((inst, birthday_analytics(n, k, d)?))
}

fn k_subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    if k > n {
        return out;
    }
    loop {
        out.push(cur.clone());
        let Some(i) = (0..k).rev().find(|&i| cur[i] < n - k + i) else {
            return out;
        };
        cur[i] += 1;
        for j in i + 1..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

/// The displayed second factorial cumulant
/// `C(n,k) sum_j C(k,j) C(n-k,k-j) d^(1+j-2k) + C(n,k)[C(n-k,k) - C(n,k)] d^(2-2k)`.
pub fn birthday_gamma2_formula(n: u32, k: u32, d: u64) -> f64 {
    let (n, k, d) = (n as u64, k as u64, d as f64);
    let c = binomial(n, k);
    let overlap: f64 = (1..k)
        .map(|j| binomial(k, j) * binomial(n - k, k - j) * d.powi(1 + j as i32 - 2 * k as i32))
        .sum();
    c * overlap + c * (binomial(n - k, k) - c) * d.powi(2 - 2 * k as i32)
}

/// Approximants `n^k/(k! d^(k-1))`, `n^(k+1)/((k-1)! d^k)`, `k n^(k+2)/((k-1)! d^(k+1))`.
pub fn birthday_tilde(n: u32, k: u32, d: u64) -> CumulantTriple {
    let (nf, kf, df) = (n as f64, k as i32, d as f64);
    let km1 = factorial(k as u64 - 1);
    CumulantTriple::new(
        nf.powi(kf) / (factorial(k as u64) * df.powi(kf - 1)),
        nf.powi(kf + 1) / (km1 * df.powi(kf)),
        kf as f64 * nf.powi(kf + 2) / (km1 * df.powi(kf + 1)),
    )
}

/// Exact factorial cumulants. `E (W)_r` is a sum over ordered `r`-tuples of
/// distinct `k`-subsets; a tuple is monochromatic with probability
/// `d^(components - |union|)`, where components are those of the overlap
/// graph. Tuples are classified by the sizes of their Venn regions.
pub fn birthday_exact(n: u32, k: u32, d: u64) -> CumulantTriple {
    let (n, k) = (n as u64, k as u64);
    let df = d as f64;
    // ordered selections with the given region sizes:
    // n! / ((n - U)! prod(size!))
    let arrangements = |sizes: &[u64]| -> f64 {
        let u: u64 = sizes.iter().sum();
        if u > n {
            return 0.0;
        }
        let falling: f64 = (0..u).map(|i| (n - i) as f64).product();
        falling / sizes.iter().map(|&s| factorial(s)).product::<f64>()
    };
    let f1 = binomial(n, k) * df.powi(1 - k as i32);

    let mut f2 = 0.0;
    for ab in 0..k {
        let a = k - ab;
        let comps = if ab > 0 { 1 } else { 2 };
        let u = 2 * k - ab;
        f2 += arrangements(&[a, a, ab]) * df.powi(comps - u as i32);
    }

    let mut f3 = 0.0;
    for abc in 0..=k {
        for ab in 0..=k - abc {
            for ac in 0..=k - abc - ab {
                let a = k - abc - ab - ac;
                for bc in 0..=(k - abc - ab).min(k - abc - ac) {
                    let b = k - abc - ab - bc;
                    let c = k - abc - ac - bc;
                    // distinct sets: A \ B, A \ C, B \ C all non-empty
                    if a + ac == 0 || a + ab == 0 || b + ab == 0 {
                        continue;
                    }
                    let links = [ab + abc > 0, ac + abc > 0, bc + abc > 0].iter().filter(|&&x| x).count();
                    let comps = match links {
                        0 => 3,
                        1 => 2,
                        _ => 1,
                    };
                    let u = a + b + c + ab + ac + bc + abc;
                    f3 += arrangements(&[a, b, c, ab, ac, bc, abc]) * df.powi(comps - u as i32);
                }
            }
        }
    }
    from_factorial_moments(f1, f2, f3)
}

fn birthday_analytics(n: u32, k: u32, d: u64) -> Result<ModelAnalytics> {
    let exact = birthday_exact(n, k, d);
    let tilde = birthday_tilde(n, k, d);
    let formula = CumulantTriple::new(
        binomial(n as u64, k as u64) * (d as f64).powi(1 - k as i32),
        birthday_gamma2_formula(n, k, d),
        tilde.g3,
    );
    // the primed parameters: the M3 match of the approximants
    let primed = solve_triplepois(&tilde).ok().map(FamilyParams::M3);
    ModelAnalytics::assemble(
        ModelSpec::Birthday { n, k, d },
        formula,
        vec!["Gamma_3".to_string()],
        exact,
        Some(tilde),
        primed,
        None,
        (n as f64).powf(-(k as f64) / (k as f64 - 1.0)),
        "n^(-k/(k-1))".to_string(),
    )
}

// --------------------------------------------------------------- mono edges

/// Vertices coloured uniformly with `c` colours; one indicator per edge.
pub fn build_mono_edges(graph: &Graph, c: u32) -> Result<(DependenceInstance, ModelAnalytics)> {
    let spec = ModelSpec::MonoEdges {
        graph: graph.clone(),
        c,
    };
    spec.validate()?;
    let sources = vec![SourceLaw::uniform(c)?; graph.num_vertices()];
    let variables = graph
        .edges()
        .iter()
        .map(|&(u, v)| Variable::new(vec![u, v], Rule::AllEqual))
        .collect::<Result<Vec<_>>>()?;
    let inst = DependenceInstance::new(spec.id(), sources, variables)?;
    Ok((inst, mono_edges_analytics(graph, c)?))
}

/// Published `(m/c, -m/c^2, 4m/c^3)`.
pub fn mono_edges_formula(m: usize, c: u32) -> CumulantTriple {
    let (m, c) = (m as f64, c as f64);
    CumulantTriple::new(m / c, -m / (c * c), 4.0 * m / c.powi(3))
}

/// Exact: edge indicators are pairwise independent and independent along
/// any forest, so only triangles contribute beyond the product form:
/// `(m/c, -m/c^2, 2m/c^3 + 6 t (c-1)/c^3)` with `t` the number of triangles.
pub fn mono_edges_exact(graph: &Graph, c: u32) -> CumulantTriple {
    let m = graph.num_edges() as f64;
    let t = graph.triangle_count() as f64;
    let c = c as f64;
    CumulantTriple::new(m / c, -m / (c * c), (2.0 * m + 6.0 * t * (c - 1.0)) / c.powi(3))
}

fn mono_edges_analytics(graph: &Graph, c: u32) -> Result<ModelAnalytics> {
    let m = graph.num_edges();
    let published = BinPoisParams::new(m as u64, 1.0 / c as f64, 0.0, 0.0).map(FamilyParams::M1).ok();
    let cf = c as f64;
    let degree = graph.max_degree() as f64;
    ModelAnalytics::assemble(
        ModelSpec::MonoEdges {
            graph: graph.clone(),
            c,
        },
        mono_edges_formula(m, c),
        Vec::new(),
        mono_edges_exact(graph, c),
        None,
        published,
        None,
        (cf / m as f64).sqrt() + degree.powi(4) / cf.powi(3),
        "sqrt(c/m) + D^4/c^3".to_string(),
    )
}

// ---------------------------------------------------------------- triangles

/// One source per vertex pair (edge present with probability `p`), one
/// indicator per vertex triple.
pub fn build_triangles(n: u32, p: f64) -> Result<(DependenceInstance, ModelAnalytics)> {
    let spec = ModelSpec::Triangles { n, p };
    spec.validate()?;
    if n > 40 {
        return Err(Error::param(format!("n={n} is too large for an explicit triangle instance")));
    }
    let nn = n as usize;
    let mut pair = vec![vec![0usize; nn]; nn];
    let mut next = 0;
    for u in 0..nn {
        for v in u + 1..nn {
            pair[u][v] = next;
            pair[v][u] = next;
            next += 1;
        }
    }
    let sources = vec![SourceLaw::bernoulli(p)?; next];
    let variables = k_subsets(nn, 3)
        .into_iter()
        .map(|t| Variable::new(vec![pair[t[0]][t[1]], pair[t[0]][t[2]], pair[t[1]][t[2]]], Rule::Product))
        .collect::<Result<Vec<_>>>()?;
    let inst = DependenceInstance::new(spec.id(), sources, variables)?;
    Ok((inst, triangles_analytics(n, p)?))
}

/// Published `Gamma_1, Gamma_2` and the leading order `n^5 p^7` of `Gamma_3`.
pub fn triangles_formula(n: u32, p: f64) -> CumulantTriple {
    let nf = n as f64;
    let c = binomial(n as u64, 3);
    CumulantTriple::new(
        c * p.powi(3),
        c * (3.0 * nf - 9.0) * p.powi(5) - c * (3.0 * nf - 8.0) * p.powi(6),
        nf.powi(5) * p.powi(7),
    )
}

/// `counts[r][(v, e)]`: number of ordered `r`-tuples of distinct triangles on a
/// fixed set of `v` labelled vertices that use all of them and `e` edges.
fn triangle_patterns() -> &'static [BTreeMap<(u32, u32), f64>; 3] {
    static PATTERNS: OnceLock<[BTreeMap<(u32, u32), f64>; 3]> = OnceLock::new();
    PATTERNS.get_or_init(|| {
        const V: usize = 9;
        let tris = k_subsets(V, 3);
        let mask = |t: &[usize]| -> (u32, u128) {
            let verts = t.iter().fold(0u32, |m, &x| m | 1 << x);
            let edge = |a: usize, b: usize| 1u128 << (a * V + b);
            (verts, edge(t[0], t[1]) | edge(t[0], t[2]) | edge(t[1], t[2]))
        };
        let masks: Vec<(u32, u128)> = tris.iter().map(|t| mask(t)).collect();
        let mut raw: [BTreeMap<(u32, u32), f64>; 3] = Default::default();
        let mut bump = |r: usize, v: u32, e: u128| {
            *raw[r].entry((v.count_ones(), e.count_ones())).or_insert(0.0) += 1.0;
        };
        for (i, &(vi, ei)) in masks.iter().enumerate() {
            bump(0, vi, ei);
            for (j, &(vj, ej)) in masks.iter().enumerate() {
                if j == i {
                    continue;
                }
                bump(1, vi | vj, ei | ej);
                for (l, &(vl, el)) in masks.iter().enumerate() {
                    if l != i && l != j {
                        bump(2, vi | vj | vl, ei | ej | el);
                    }
                }
            }
        }
        // every pattern on v vertices appears once for each of the C(9, v) vertex sets
        raw.map(|m| {
            m.into_iter()
                .map(|((v, e), c)| ((v, e), c / binomial(V as u64, v as u64)))
                .collect()
        })
    })
}

/// Exact factorial cumulants of the triangle count, from the pattern counts.
pub fn triangles_exact(n: u32, p: f64) -> CumulantTriple {
    let moment = |r: usize| -> f64 {
        triangle_patterns()[r]
            .iter()
            .map(|(&(v, e), &c)| c * binomial(n as u64, v as u64) * p.powi(e as i32))
            .sum()
    };
    from_factorial_moments(moment(0), moment(1), moment(2))
}

/// Exact mean and variance of the triangle count.
pub fn triangles_mean_variance(n: u32, p: f64) -> (f64, f64) {
    let g = triangles_formula(n, p);
    (g.g1, g.g1 + g.g2)
}

fn triangles_analytics(n: u32, p: f64) -> Result<ModelAnalytics> {
    let formula = triangles_formula(n, p);
    let published = solve_family(Family::M2, &formula, formula.g1).ok();
    let nf = n as f64;
    let alpha = -p.ln() / nf.ln();
    ModelAnalytics::assemble(
        ModelSpec::Triangles { n, p },
        formula,
        vec!["Gamma_3".to_string()],
        triangles_exact(n, p),
        None,
        published,
        Some((nf * p).powi(-3)),
        nf.powf(-1.5 + 1.5 * alpha),
        "n^(-3/2 + 3 alpha/2), alpha = -ln p / ln n".to_string(),
    )
}

// ----------------------------------------------------------------- dispatch

/// Instance and analytics for any model.
pub fn build_model(spec: &ModelSpec) -> Result<(DependenceInstance, ModelAnalytics)> {
    match spec {
        ModelSpec::Hypercube { d } => build_hypercube(*d),
        ModelSpec::Birthday { n, k, d } => build_birthday(*n, *k, *d),
        ModelSpec::MonoEdges { graph, c } => build_mono_edges(graph, *c),
        ModelSpec::Triangles { n, p } => build_triangles(*n, *p),
    }
}

/// Analytics alone; works at sizes far beyond explicit instances.
pub fn model_analytics(spec: &ModelSpec) -> Result<ModelAnalytics> {
    spec.validate()?;
    match spec {
        ModelSpec::Hypercube { d } => hypercube_analytics(*d),
        ModelSpec::Birthday { n, k, d } => birthday_analytics(*n, *k, *d),
        ModelSpec::MonoEdges { graph, c } => mono_edges_analytics(graph, *c),
        ModelSpec::Triangles { n, p } => triangles_analytics(*n, *p),
    }
}

/// Direct sampler of `W`, with per-model precomputation.
#[derive(Clone, Debug)]
pub struct ModelSampler {
    spec: ModelSpec,
    log_q: f64,
}

impl ModelSampler {
    pub fn new(spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        let log_q = match spec {
            ModelSpec::Triangles { p, .. } => (-p).ln_1p(),
            _ => 0.0,
        };
        Ok(ModelSampler {
            spec: spec.clone(),
            log_q,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Draw number `index` of `W` for `seed`.
    pub fn draw(&self, seed: u64, index: u64) -> i64 {
        self.draw_with(seed, index, &mut GraphScratch::default())
    }

    /// Like [`Self::draw`], reusing buffers across calls.
    pub fn draw_with(&self, seed: u64, index: u64, scratch: &mut GraphScratch) -> i64 {
        let mut rng = stream_rng(seed, index);
        match &self.spec {
            ModelSpec::Hypercube { d } => {
                let d = *d;
                let n = 1usize << d;
                // orientation[b * n + v] for v with bit b clear
                let bits: Vec<bool> = (0..d as usize * n).map(|_| rng.random::<bool>()).collect();
                (0..n)
                    .filter(|&v| {
                        (0..d).all(|b| {
                            let lower = v & !(1 << b);
                            bits[b as usize * n + lower] == ((v >> b) & 1 == 1)
                        })
                    })
                    .count() as i64
            }
            ModelSpec::Birthday { n, k, d } => {
                let mut boxes: Vec<u64> = (0..*n).map(|_| rng.random_range(0..*d)).collect();
                boxes.sort_unstable();
                boxes
                    .chunk_by(|a, b| a == b)
                    .map(|run| binomial(run.len() as u64, *k as u64) as i64)
                    .sum()
            }
            ModelSpec::MonoEdges { graph, c } => {
                let colours: Vec<u32> = (0..graph.num_vertices()).map(|_| rng.random_range(0..*c)).collect();
                graph.edges().iter().filter(|&&(u, v)| colours[u] == colours[v]).count() as i64
            }
            ModelSpec::Triangles { n, p } => {
                scratch.sample_gnp(*n as usize, *p, self.log_q, &mut rng);
                scratch.triangles() as i64
            }
        }
    }

    /// Histogram of draws `0..samples`, reduced in fixed chunks so the result
    /// is independent of the worker count.
    pub fn counts(&self, samples: u64, seed: u64) -> BTreeMap<i64, u64> {
        const CHUNKS: u64 = 256;
        let chunks = CHUNKS.min(samples.max(1));
        let parts = map_indexed(chunks as usize, |c| {
            let start = samples * c as u64 / chunks;
            let end = samples * (c as u64 + 1) / chunks;
            let mut h: HashMap<i64, u64> = HashMap::new();
            let mut scratch = GraphScratch::default();
            for i in start..end {
                *h.entry(self.draw_with(seed, i, &mut scratch)).or_insert(0) += 1;
            }
            h.into_iter().collect::<BTreeMap<_, _>>()
        });
        tree_reduce(parts, |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_insert(0) += v;
            }
            a
        })
        .unwrap_or_default()
    }
}

/// Reusable buffers for `G(n, p)` draws: the forward adjacency (neighbours
/// with larger label) in compressed rows, and a marker array.
#[derive(Clone, Debug, Default)]
pub struct GraphScratch {
    edges: Vec<(u32, u32)>,
    start: Vec<u32>,
    fwd: Vec<u32>,
    mark: Vec<u32>,
}

impl GraphScratch {
    /// Geometric skipping over the pairs `(w, v)`, `w < v`, in row-major order of `v`.
    fn sample_gnp(&mut self, n: usize, p: f64, log_q: f64, rng: &mut impl Rng) {
        self.edges.clear();
        if p >= 1.0 {
            self.edges.extend((1..n as u32).flat_map(|v| (0..v).map(move |w| (w, v))));
        } else {
            let (mut v, mut w) = (1usize, -1i64);
            while v < n {
                let u: f64 = rng.random();
                w += 1 + ((-u).ln_1p() / log_q).floor() as i64;
                while w >= v as i64 && v < n {
                    w -= v as i64;
                    v += 1;
                }
                if v < n {
                    self.edges.push((w as u32, v as u32));
                }
            }
        }
        self.start.clear();
        self.start.resize(n + 1, 0);
        for &(w, _) in &self.edges {
            self.start[w as usize + 1] += 1;
        }
        for i in 0..n {
            self.start[i + 1] += self.start[i];
        }
        self.fwd.resize(self.edges.len(), 0);
        let mut fill: Vec<u32> = self.start[..n].to_vec();
        // edges arrive sorted by v, so every row is sorted
        for &(w, v) in &self.edges {
            self.fwd[fill[w as usize] as usize] = v;
            fill[w as usize] += 1;
        }
    }


    /// Triangles `u < v < w`: mark the forward neighbours of `u`, then scan
    /// the forward neighbours of each of them.
    fn triangles(&mut self) -> u64 {
        let n = self.start.len() - 1;
        self.mark.clear();
        self.mark.resize(n, u32::MAX);
        let (start, fwd, mark) = (&self.start, &self.fwd, &mut self.mark);
        let row = |u: usize| &fwd[start[u] as usize..start[u + 1] as usize];
        let mut total = 0u64;
        for u in 0..n {
            for &v in row(u) {
                mark[v as usize] = u as u32;
            }
            for &v in row(u) {
                total += row(v as usize).iter().filter(|&&w| mark[w as usize] == u as u32).count() as u64;
            }
        }
        total
    }
}

/// One draw of `W`; see [`ModelSampler`] for repeated draws.
pub fn sample_w(spec: &ModelSpec, seed: u64, index: u64) -> Result<i64> {
    Ok(ModelSampler::new(spec)?.draw(seed, index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::localdep::exact_cumulants;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn hypercube_exact_matches_enumeration() {
        for d in [2, 3] {
            let (inst, an) = build_hypercube(d).unwrap();
            let g = exact_cumulants(&inst).unwrap();
            assert_eq!(g.g1, 1.0);
            assert!(g.max_abs_diff(&an.cumulants_exact) < 1e-14, "d={d}: {g} vs {}", an.cumulants_exact);
        }
        let an = hypercube_analytics(2).unwrap();
        assert_eq!(an.cumulants_exact, CumulantTriple::new(1.0, -0.75, 1.25));
        assert!(an.discrepancies.iter().any(|x| x.quantity == "Gamma_2" && x.formula == 0.25));
    }

    #[test]
    fn hypercube_published_parameters_at_d8() {
        let an = hypercube_analytics(8).unwrap();
        let Some(FamilyParams::M3(t)) = an.published_params else {
            panic!("expected M3 parameters");
        };
        assert!(close(t.lambda, 0.97598, 5e-6));
        assert!(close(t.omega, 0.020687, 5e-6));
        assert!(close(t.eta, 0.0033264, 5e-8));
    }

    #[test]
    fn birthday_small_case() {
        let (inst, an) = build_birthday(3, 2, 2).unwrap();
        let g = exact_cumulants(&inst).unwrap();
        assert_eq!((g.g1, g.g2), (1.5, -0.75));
        assert_eq!(an.cumulants_formula.g2, -0.75);
        assert!(g.max_abs_diff(&an.cumulants_exact) < 1e-14);
    }

    #[test]
    fn birthday_exact_formula_matches_enumeration() {
        for (n, k, d) in [(4, 2, 3), (5, 2, 3), (4, 3, 2), (6, 3, 3), (5, 4, 2), (7, 2, 5)] {
            let (inst, an) = build_birthday(n, k, d).unwrap();
            let g = exact_cumulants(&inst).unwrap();
            assert!(g.max_abs_diff(&an.cumulants_exact) < 1e-12, "{n},{k},{d}: {g} vs {}", an.cumulants_exact);
            assert!(close(g.g2, birthday_gamma2_formula(n, k, d), 1e-12));
        }
    }

    #[test]
    fn birthday_zero_means_no_crowded_box() {
        let (inst, _) = build_birthday(5, 2, 4).unwrap();
        let pmf = crate::localdep::enumerate_exact_distribution(&inst).unwrap();
        // all five balls in distinct boxes is impossible with four boxes
        assert_eq!(pmf.prob(0), 0.0);
        let (inst, _) = build_birthday(4, 3, 3).unwrap();
        let pmf = crate::localdep::enumerate_exact_distribution(&inst).unwrap();
        // no box with 3+ balls: 81 - 3 (all four in one box) - 3*4*2 (three in one, one elsewhere)
        assert!(close(pmf.prob(0), 54.0 / 81.0, 1e-15));
    }

    #[test]
    fn mono_edges_examples() {
        let k3 = Graph::complete(3);
        let (inst, an) = build_mono_edges(&k3, 2).unwrap();
        let g = exact_cumulants(&inst).unwrap();
        assert_eq!(g, CumulantTriple::new(1.5, -0.75, 1.5));
        assert_eq!(an.cumulants_formula, g);
        assert!(an.discrepancies.is_empty());

        let fig = Graph::example_seven();
        assert_eq!(fig.num_edges(), 11);
        let (inst, an) = build_mono_edges(&fig, 3).unwrap();
        assert!(close(an.cumulants_formula.g1, 11.0 / 3.0, 1e-15));
        let g = exact_cumulants(&inst).unwrap();
        assert!(g.max_abs_diff(&an.cumulants_exact) < 1e-13);
        // the published third cumulant misses the triangle correction here
        assert!(an.discrepancies.iter().any(|x| x.quantity == "Gamma_3"));

        let Some(FamilyParams::M1(b)) = an.formula_matched_params else {
            panic!("expected M1")
        };
        assert_eq!(b.n, 2);
        assert!(close(b.n as f64 + b.delta, 11.0 / 4.0, 1e-12));
        assert!(close(b.p, 2.0 / 3.0, 1e-15));
        assert!(close(b.lambda, 11.0 / 3.0 - 2.0 * 2.0 / 3.0, 1e-12));
        let Some(FamilyParams::M1(published)) = an.published_params else {
            panic!("expected M1")
        };
        assert_eq!((published.n, published.lambda), (11, 0.0));
    }

    #[test]
    fn mono_edges_exact_on_forests_and_cliques() {
        for (g, c) in [(Graph::path(4), 3), (Graph::complete(4), 2), (Graph::complete(5), 3)] {
            let (inst, an) = build_mono_edges(&g, c).unwrap();
            let e = exact_cumulants(&inst).unwrap();
            assert!(e.max_abs_diff(&an.cumulants_exact) < 1e-12);
        }
    }

    #[test]
    fn triangles_small_case() {
        let (inst, an) = build_triangles(4, 0.5).unwrap();
        let g = exact_cumulants(&inst).unwrap();
        assert!(close(g.g1, 0.5, 1e-12) && close(g.g2, 0.125, 1e-12));
        assert!(close(an.cumulants_formula.g1, 0.5, 1e-15));
        assert!(close(an.cumulants_formula.g2, 0.125, 1e-15));
        assert!(close(an.cumulants_formula.g3, 8.0, 1e-12));
        assert!(g.max_abs_diff(&an.cumulants_exact) < 1e-12);
    }

    #[test]
    fn triangle_patterns_match_enumeration() {
        for (n, p) in [(5, 0.3), (6, 0.5)] {
            let (inst, _) = build_triangles(n, p).unwrap();
            let g = exact_cumulants(&inst).unwrap();
            let e = triangles_exact(n, p);
            let f = triangles_formula(n, p);
            assert!(g.max_abs_diff(&e) < 1e-11, "{g} vs {e}");
            assert!(close(g.g1, f.g1, 1e-12) && close(g.g2, f.g2, 1e-12));
        }
        // pattern counts reproduce the closed-form variance at any n
        let e = triangles_exact(300, 0.05);
        let f = triangles_formula(300, 0.05);
        assert!(close(e.g2, f.g2, 1e-9 * f.g2.abs()));
    }

    #[test]
    fn triangles_moments_at_scale() {
        let n = 300;
        let p = 300f64.powf(-0.6);
        let (mu, var) = triangles_mean_variance(n, p);
        assert!(close(mu, 154.895_641_720_600_7, 1e-9), "mu={mu}");
        assert!(close(var, 297.110_132_027_655_4, 1e-9), "var={var}");
        // rounded reference values quoted for this cell
        assert!(close(mu, 155.7, 0.01 * 155.7) && close(var, 299.0, 0.01 * 299.0));
        let an = model_analytics(&ModelSpec::Triangles { n, p }).unwrap();
        assert_eq!(an.recommended_family.family, Family::M2);
        assert!(close(an.rate, 300f64.powf(-0.6), 1e-12));
    }

    #[test]
    fn sampler_examples() {
        let all = ModelSpec::Triangles { n: 4, p: 1.0 };
        for i in 0..10 {
            assert_eq!(sample_w(&all, 3, i).unwrap(), 4);
        }
        let bad = ModelSpec::MonoEdges {
            graph: Graph::complete(3),
            c: 1,
        };
        assert!(matches!(sample_w(&bad, 0, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn gnp_sampler_moments() {
        let spec = ModelSpec::Triangles { n: 30, p: 0.2 };
        let s = ModelSampler::new(&spec).unwrap();
        let h = s.counts(40_000, 11);
        let total: u64 = h.values().sum();
        let mean = h.iter().map(|(&k, &c)| k as f64 * c as f64).sum::<f64>() / total as f64;
        let (mu, var) = triangles_mean_variance(30, 0.2);
        assert!(close(mean, mu, 4.0 * (var / total as f64).sqrt()), "{mean} vs {mu}");
    }

    #[test]
    fn edge_list_round_trip() {
        let g = Graph::example_seven();
        let back = Graph::parse_edge_list(&format!("# comment\n{}\n", g.to_edge_list())).unwrap();
        assert_eq!(back, g);
        assert!(Graph::parse_edge_list("0 0\n").is_err());
        assert!(Graph::parse_edge_list("0 1\n1 0\n").is_err());
        assert!(Graph::parse_edge_list("0 x\n").is_err());
        assert_eq!(g.triangle_count(), Graph::example_seven().triangle_count());
        assert_eq!(Graph::complete(5).triangle_count(), 10);
    }

    #[test]
    fn k_subsets_count() {
        assert_eq!(k_subsets(6, 3).len(), 20);
        assert_eq!(k_subsets(3, 3), vec![vec![0, 1, 2]]);
    }
}
