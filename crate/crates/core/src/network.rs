//! Linear resistive-network solver (modified nodal analysis).
//!
//! Networks hold positive resistors and grounded voltage sources with an
//! optional series resistance. A [`Solver`] validates the structure once,
//! assembles the MNA matrix and caches its LU factorization; every solve
//! afterwards is a pair of triangular substitutions. Since SPDT switches
//! only change source levels, one factorization serves every digit state.

use std::collections::VecDeque;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Dyn, LU};
use thiserror::Error;

/// Node index; node 0 is ground.
pub type NodeId = usize;

pub const GROUND: NodeId = 0;

/// Relative residual every solve must meet.
pub const SOLVER_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("resistor {index} ({a}-{b}) has invalid resistance {ohms}")]
    BadResistance { index: usize, a: String, b: String, ohms: f64 },
    #[error("element references unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node '{0}' has no resistive path to ground")]
    FloatingNode(String),
    #[error("node '{0}' is driven by more than one ideal source")]
    SourceLoop(String),
    #[error("ideal source {0} is connected to ground")]
    GroundedSource(usize),
    #[error("expected {expected} source levels, got {got}")]
    LevelCount { expected: usize, got: usize },
    #[error("port is not set")]
    NoPort,
    #[error("MNA matrix is singular near node '{0}'")]
    Singular(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resistor {
    pub a: NodeId,
    pub b: NodeId,
    pub ohms: f64,
}

/// Voltage source from ground to `node`, through `series_ohms` (0 = ideal).
#[derive(Debug, Clone, PartialEq)]
pub struct Source {
    pub node: NodeId,
    pub series_ohms: f64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResistiveNetwork {
    names: Vec<String>,
    resistors: Vec<Resistor>,
    sources: Vec<Source>,
    port: Option<(NodeId, NodeId)>,
}

impl Default for ResistiveNetwork {
    fn default() -> Self {
        Self::new()
    }
}

impl ResistiveNetwork {
    pub fn new() -> Self {
        ResistiveNetwork {
            names: vec!["0".to_string()],
            resistors: Vec::new(),
            sources: Vec::new(),
            port: None,
        }
    }

    pub fn add_node(&mut self, name: impl Into<String>) -> NodeId {
        self.names.push(name.into());
        self.names.len() - 1
    }

    pub fn add_resistor(&mut self, a: NodeId, b: NodeId, ohms: f64) -> usize {
        self.resistors.push(Resistor { a, b, ohms });
        self.resistors.len() - 1
    }

    pub fn add_source(&mut self, node: NodeId, series_ohms: f64, label: impl Into<String>) -> usize {
        self.sources.push(Source {
            node,
            series_ohms,
            label: label.into(),
        });
        self.sources.len() - 1
    }

    pub fn set_port(&mut self, p: NodeId, n: NodeId) {
        self.port = Some((p, n));
    }

    pub fn port(&self) -> Option<(NodeId, NodeId)> {
        self.port
    }

    pub fn node_count(&self) -> usize {
        self.names.len()
    }

    pub fn node_name(&self, id: NodeId) -> &str {
        &self.names[id]
    }

    pub fn resistors(&self) -> &[Resistor] {
        &self.resistors
    }

    pub fn resistors_mut(&mut self) -> &mut [Resistor] {
        &mut self.resistors
    }

    pub fn sources(&self) -> &[Source] {
        &self.sources
    }

    /// Copy of this network with a resistor across the port.
    pub fn with_load(&self, ohms: f64) -> Result<ResistiveNetwork, SolverError> {
        let (p, n) = self.port.ok_or(SolverError::NoPort)?;
        let mut net = self.clone();
        net.add_resistor(p, n, ohms);
        Ok(net)
    }

    /// Multiply every resistance (including source series resistance) by `c`.
    pub fn scaled(&self, c: f64) -> ResistiveNetwork {
        let mut net = self.clone();
        for r in &mut net.resistors {
            r.ohms *= c;
        }
        for s in &mut net.sources {
            s.series_ohms *= c;
        }
        net
    }

    /// Textual netlist for inspection and golden-file tests.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, name) in self.names.iter().enumerate().skip(1) {
            let _ = writeln!(out, "N{i} {name}");
        }
        for (i, r) in self.resistors.iter().enumerate() {
            let _ = writeln!(out, "R{i} {} {} {}", r.a, r.b, r.ohms);
        }
        for (i, s) in self.sources.iter().enumerate() {
            let _ = writeln!(out, "V{i} {} 0 series={} {}", s.node, s.series_ohms, s.label);
        }
        if let Some((p, n)) = self.port {
            let _ = writeln!(out, "PORT {p} {n}");
        }
        out
    }

    fn name_of(&self, id: NodeId) -> String {
        self.names.get(id).cloned().unwrap_or_else(|| id.to_string())
    }

    /// Check element values, source placement and connectivity to ground.
    pub fn validate(&self) -> Result<(), SolverError> {
        let n = self.names.len();
        for (index, r) in self.resistors.iter().enumerate() {
            if r.a >= n || r.b >= n {
                return Err(SolverError::UnknownNode(r.a.max(r.b)));
            }
            if !(r.ohms > 0.0 && r.ohms.is_finite()) || r.a == r.b {
                return Err(SolverError::BadResistance {
                    index,
                    a: self.name_of(r.a),
                    b: self.name_of(r.b),
                    ohms: r.ohms,
                });
            }
        }
        let mut ideal_driven = vec![false; n];
        for (i, s) in self.sources.iter().enumerate() {
            if s.node >= n {
                return Err(SolverError::UnknownNode(s.node));
            }
            if !(s.series_ohms >= 0.0 && s.series_ohms.is_finite()) {
                return Err(SolverError::BadResistance {
                    index: self.resistors.len() + i,
                    a: self.name_of(s.node),
                    b: "0".into(),
                    ohms: s.series_ohms,
                });
            }
            if s.series_ohms == 0.0 {
                if s.node == GROUND {
                    return Err(SolverError::GroundedSource(i));
                }
                if ideal_driven[s.node] {
                    return Err(SolverError::SourceLoop(self.name_of(s.node)));
                }
                ideal_driven[s.node] = true;
            }
        }
        if let Some((p, q)) = self.port {
            if p >= n || q >= n {
                return Err(SolverError::UnknownNode(p.max(q)));
            }
        }

        let mut adj: Vec<Vec<NodeId>> = vec![Vec::new(); n];
        for r in &self.resistors {
            adj[r.a].push(r.b);
            adj[r.b].push(r.a);
        }
        for s in &self.sources {
            adj[s.node].push(GROUND);
            adj[GROUND].push(s.node);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([GROUND]);
        seen[GROUND] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        if let Some(id) = seen.iter().position(|s| !s) {
            return Err(SolverError::FloatingNode(self.name_of(id)));
        }
        Ok(())
    }
}

/// Node voltages (index = [`NodeId`], ground included) and source currents
/// (positive = out of the source's positive terminal).
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub node_voltages: Vec<f64>,
    pub source_currents: Vec<f64>,
}

impl Solution {
    pub fn voltage(&self, node: NodeId) -> f64 {
        self.node_voltages[node]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheveninEquivalent {
    pub v_open: f64,
    pub z_out: f64,
}

/// Assembled and factored MNA system for one network.
#[derive(Debug, Clone)]
pub struct Solver {
    net: ResistiveNetwork,
    /// MNA row of each source's branch current, for ideal sources.
    branch_row: Vec<Option<usize>>,
    lu: LU<f64, Dyn, Dyn>,
    dim: usize,
}

impl Solver {
    pub fn new(net: &ResistiveNetwork) -> Result<Solver, SolverError> {
        net.validate()?;
        let nodes = net.node_count() - 1;
        let mut branch_row = Vec::with_capacity(net.sources.len());
        let mut next = nodes;
        for s in &net.sources {
            if s.series_ohms == 0.0 {
                branch_row.push(Some(next));
                next += 1;
            } else {
                branch_row.push(None);
            }
        }
        let dim = next;
        let mut a = DMatrix::<f64>::zeros(dim, dim);
        let idx = |n: NodeId| if n == GROUND { None } else { Some(n - 1) };
        let mut stamp = |p: Option<usize>, q: Option<usize>, g: f64| {
            if let Some(i) = p {
                a[(i, i)] += g;
            }
            if let Some(j) = q {
                a[(j, j)] += g;
            }
            if let (Some(i), Some(j)) = (p, q) {
                a[(i, j)] -= g;
                a[(j, i)] -= g;
            }
        };
        for r in &net.resistors {
            stamp(idx(r.a), idx(r.b), 1.0 / r.ohms);
        }
        for s in net.sources.iter().filter(|s| s.series_ohms > 0.0) {
            stamp(idx(s.node), None, 1.0 / s.series_ohms);
        }
        for (s, row) in net.sources.iter().zip(&branch_row) {
            if let (Some(row), Some(i)) = (row, idx(s.node)) {
                a[(i, *row)] += 1.0;
                a[(*row, i)] += 1.0;
            }
        }
        let lu = a.lu();
        if !lu.is_invertible() {
            return Err(SolverError::Singular(net.name_of(1)));
        }
        Ok(Solver {
            net: net.clone(),
            branch_row,
            lu,
            dim,
        })
    }

    pub fn network(&self) -> &ResistiveNetwork {
        &self.net
    }

    pub fn source_count(&self) -> usize {
        self.net.sources.len()
    }

    pub fn solve(&self, levels: &[f64]) -> Result<Solution, SolverError> {
        self.solve_with_injection(levels, &[])
    }

    /// Solve with extra current injections `(node, amps into node)`.
    pub fn solve_with_injection(
        &self,
        levels: &[f64],
        injections: &[(NodeId, f64)],
    ) -> Result<Solution, SolverError> {
        if levels.len() != self.net.sources.len() {
            return Err(SolverError::LevelCount {
                expected: self.net.sources.len(),
                got: levels.len(),
            });
        }
        let mut b = DVector::<f64>::zeros(self.dim);
        for (s, (&v, row)) in self.net.sources.iter().zip(levels.iter().zip(&self.branch_row)) {
            match row {
                Some(row) => b[*row] = v,
                None if s.node != GROUND => b[s.node - 1] += v / s.series_ohms,
                None => {}
            }
        }
        for &(node, amps) in injections {
            if node >= self.net.node_count() {
                return Err(SolverError::UnknownNode(node));
            }
            if node != GROUND {
                b[node - 1] += amps;
            }
        }
        let x = self
            .lu
            .solve(&b)
            .ok_or_else(|| SolverError::Singular(self.net.name_of(1)))?;
        let mut node_voltages = vec![0.0; self.net.node_count()];
        node_voltages[1..].copy_from_slice(&x.as_slice()[..self.net.node_count() - 1]);
        let source_currents = self
            .net
            .sources
            .iter()
            .zip(levels.iter().zip(&self.branch_row))
            .map(|(s, (&v, row))| match row {
                // Branch variable is the current flowing from the node into
                // the source's positive terminal.
                Some(row) => -x[*row],
                None => (v - node_voltages[s.node]) / s.series_ohms,
            })
            .collect();
        Ok(Solution {
            node_voltages,
            source_currents,
        })
    }

    pub fn port_voltage(&self, sol: &Solution) -> Result<f64, SolverError> {
        let (p, n) = self.net.port.ok_or(SolverError::NoPort)?;
        Ok(sol.node_voltages[p] - sol.node_voltages[n])
    }

    /// Open-circuit port voltage for `levels`, and port impedance with all
    /// sources zeroed and a unit test current driven into the port.
    pub fn thevenin(&self, levels: &[f64]) -> Result<TheveninEquivalent, SolverError> {
        let (p, n) = self.net.port.ok_or(SolverError::NoPort)?;
        let v_open = self.port_voltage(&self.solve(levels)?)?;
        let zeros = vec![0.0; self.net.sources.len()];
        let test = self.solve_with_injection(&zeros, &[(p, 1.0), (n, -1.0)])?;
        let z_out = test.node_voltages[p] - test.node_voltages[n];
        Ok(TheveninEquivalent { v_open, z_out })
    }

    /// Port volts per source volt, one entry per source.
    pub fn superposition_weights(&self) -> Result<Vec<f64>, SolverError> {
        let mut levels = vec![0.0; self.net.sources.len()];
        (0..levels.len())
            .map(|i| {
                levels[i] = 1.0;
                let v = self.port_voltage(&self.solve(&levels)?);
                levels[i] = 0.0;
                v
            })
            .collect()
    }

    /// `out[j][i]`: current out of source `j` per volt on source `i`.
    pub fn source_admittance(&self) -> Result<Vec<Vec<f64>>, SolverError> {
        let m = self.net.sources.len();
        let mut cols = Vec::with_capacity(m);
        let mut levels = vec![0.0; m];
        for i in 0..m {
            levels[i] = 1.0;
            cols.push(self.solve(&levels)?.source_currents);
            levels[i] = 0.0;
        }
        Ok((0..m).map(|j| (0..m).map(|i| cols[i][j]).collect()).collect())
    }

    /// Largest KCL imbalance over all nodes, relative to the largest branch
    /// current in the solution.
    pub fn kcl_residual(&self, sol: &Solution) -> f64 {
        let net = &self.net;
        let mut imbalance = vec![0.0; net.node_count()];
        let mut scale: f64 = 0.0;
        for r in &net.resistors {
            let i = (sol.node_voltages[r.a] - sol.node_voltages[r.b]) / r.ohms;
            imbalance[r.a] -= i;
            imbalance[r.b] += i;
            scale = scale.max(i.abs());
        }
        for (s, &i) in net.sources.iter().zip(&sol.source_currents) {
            imbalance[s.node] += i;
            scale = scale.max(i.abs());
        }
        let worst = imbalance[1..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            worst
        } else {
            worst / scale
        }
    }
}

/// One-shot solve.
pub fn solve(net: &ResistiveNetwork, levels: &[f64]) -> Result<Solution, SolverError> {
    Solver::new(net)?.solve(levels)
}

pub fn thevenin(net: &ResistiveNetwork, levels: &[f64]) -> Result<TheveninEquivalent, SolverError> {
    Solver::new(net)?.thevenin(levels)
}

pub fn superposition_weights(net: &ResistiveNetwork) -> Result<Vec<f64>, SolverError> {
    Solver::new(net)?.superposition_weights()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn divider() -> ResistiveNetwork {
        let mut net = ResistiveNetwork::new();
        let top = net.add_node("top");
        let mid = net.add_node("mid");
        net.add_source(top, 0.0, "v90");
        net.add_resistor(top, mid, 100.0);
        net.add_resistor(mid, GROUND, 100.0);
        net.set_port(mid, GROUND);
        net
    }

    #[test]
    fn symmetric_divider() {
        let net = divider();
        let sol = solve(&net, &[90.0]).unwrap();
        assert!((sol.voltage(2) - 45.0).abs() < 1e-12);
        assert!((sol.source_currents[0] - 0.45).abs() < 1e-12);
        assert_eq!(superposition_weights(&net).unwrap(), vec![0.5]);
    }

    #[test]
    fn series_source_matches_explicit_resistor() {
        let mut a = ResistiveNetwork::new();
        let mid = a.add_node("mid");
        a.add_source(mid, 100.0, "v");
        a.add_resistor(mid, GROUND, 100.0);
        a.set_port(mid, GROUND);
        let sa = solve(&a, &[90.0]).unwrap();
        let sb = solve(&divider(), &[90.0]).unwrap();
        assert!((sa.voltage(mid) - sb.voltage(2)).abs() < 1e-12);
        assert!((sa.source_currents[0] - sb.source_currents[0]).abs() < 1e-12);
    }

    #[test]
    fn homogeneous_is_zero() {
        let sol = solve(&divider(), &[0.0]).unwrap();
        assert!(sol.node_voltages.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn divider_thevenin() {
        let th = thevenin(&divider(), &[90.0]).unwrap();
        assert!((th.v_open - 45.0).abs() < 1e-12);
        assert!((th.z_out - 50.0).abs() < 1e-12);
    }

    #[test]
    fn floating_node_is_named() {
        let mut net = divider();
        let a = net.add_node("island_a");
        let b = net.add_node("island_b");
        net.add_resistor(a, b, 10.0);
        match Solver::new(&net) {
            Err(SolverError::FloatingNode(name)) => assert_eq!(name, "island_a"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn structural_errors() {
        let mut net = divider();
        net.add_source(1, 0.0, "again");
        assert!(matches!(Solver::new(&net), Err(SolverError::SourceLoop(n)) if n == "top"));

        let mut net = divider();
        net.add_resistor(1, 2, 0.0);
        assert!(matches!(Solver::new(&net), Err(SolverError::BadResistance { .. })));

        let solver = Solver::new(&divider()).unwrap();
        assert!(matches!(
            solver.solve(&[1.0, 2.0]),
            Err(SolverError::LevelCount { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn netlist_dump_golden() {
        let expected = "N1 top\nN2 mid\nR0 1 2 100\nR1 2 0 100\nV0 1 0 series=0 v90\nPORT 2 0\n";
        assert_eq!(divider().dump(), expected);
    }

    /// Random connected network: a spanning chain plus extra branches, with
    /// sources on a few nodes.
    fn random_network(
        nodes: usize,
        extra: &[(usize, usize, f64)],
        chain: &[f64],
        srcs: &[(usize, f64)],
    ) -> ResistiveNetwork {
        let mut net = ResistiveNetwork::new();
        let ids: Vec<_> = (0..nodes).map(|i| net.add_node(format!("n{i}"))).collect();
        net.add_resistor(GROUND, ids[0], chain[0]);
        for i in 1..nodes {
            net.add_resistor(ids[i - 1], ids[i], chain[i]);
        }
        for &(a, b, r) in extra {
            let (a, b) = (a % (nodes + 1), b % (nodes + 1));
            if a != b {
                net.add_resistor(a, b, r);
            }
        }
        for &(n, r) in srcs {
            net.add_source(1 + n % nodes, r, format!("s{n}"));
        }
        net.set_port(ids[nodes - 1], GROUND);
        net
    }

    /// Independent oracle: Gauss-Seidel relaxation on nodal equations.
    fn relaxation_voltages(net: &ResistiveNetwork, levels: &[f64]) -> Vec<f64> {
        let n = net.node_count();
        let mut v = vec![0.0; n];
        let mut fixed = vec![None; n];
        for (s, &l) in net.sources().iter().zip(levels) {
            if s.series_ohms == 0.0 {
                fixed[s.node] = Some(l);
            }
        }
        for (i, f) in fixed.iter().enumerate() {
            if let Some(l) = f {
                v[i] = *l;
            }
        }
        for _ in 0..200_000 {
            let mut delta: f64 = 0.0;
            for i in 1..n {
                if let Some(l) = fixed[i] {
                    v[i] = l;
                    continue;
                }
                let (mut g, mut gi) = (0.0, 0.0);
                for r in net.resistors() {
                    let other = if r.a == i {
                        r.b
                    } else if r.b == i {
                        r.a
                    } else {
                        continue;
                    };
                    g += 1.0 / r.ohms;
                    gi += v[other] / r.ohms;
                }
                for (s, &l) in net.sources().iter().zip(levels) {
                    if s.node == i && s.series_ohms > 0.0 {
                        g += 1.0 / s.series_ohms;
                        gi += l / s.series_ohms;
                    }
                }
                let nv = gi / g;
                delta = delta.max((nv - v[i]).abs());
                v[i] = nv;
            }
            if delta < 1e-15 {
                break;
            }
        }
        v
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn kcl_and_relaxation_agree(
            chain in prop::collection::vec(10.0f64..1e4, 6),
            extra in prop::collection::vec((0usize..7, 0usize..7, 10.0f64..1e4), 0..4),
            srcs in prop::collection::vec((0usize..6, prop_oneof![Just(0.0), 1.0f64..100.0]), 1..4),
            levels in prop::collection::vec(-90.0f64..90.0, 4),
        ) {
            let mut net = random_network(6, &extra, &chain, &srcs);
            // keep only the first ideal source per node
            let mut seen = [false; 8];
            let kept: Vec<Source> = net.sources().iter().filter(|s| {
                if s.series_ohms > 0.0 { return true; }
                let dup = seen[s.node];
                seen[s.node] = true;
                !dup
            }).cloned().collect();
            net.sources = kept;
            let levels = &levels[..net.sources().len()];
            let solver = Solver::new(&net).unwrap();
            let sol = solver.solve(levels).unwrap();
            prop_assert!(solver.kcl_residual(&sol) <= SOLVER_TOLERANCE);
            let oracle = relaxation_voltages(&net, levels);
            let scale = levels.iter().fold(1e-12f64, |m, l| m.max(l.abs()));
            for (a, b) in sol.node_voltages.iter().zip(&oracle) {
                prop_assert!((a - b).abs() <= 1e-9 * scale, "{a} vs {b}");
            }
        }

        #[test]
        fn superposition_and_scaling(
            chain in prop::collection::vec(10.0f64..1e4, 5),
            srcs in prop::collection::vec((0usize..5, 1.0f64..100.0), 1..4),
            s1 in prop::collection::vec(-10.0f64..10.0, 3),
            s2 in prop::collection::vec(-10.0f64..10.0, 3),
            c in 0.1f64..10.0,
        ) {
            let net = random_network(5, &[], &chain, &srcs);
            let m = net.sources().len();
            let solver = Solver::new(&net).unwrap();
            let v = |s: &[f64]| solver.port_voltage(&solver.solve(s).unwrap()).unwrap();
            let sum: Vec<f64> = s1[..m].iter().zip(&s2[..m]).map(|(a, b)| a + b).collect();
            let lhs = v(&sum);
            let rhs = v(&s1[..m]) + v(&s2[..m]);
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (lhs.abs() + 1.0));

            let w = solver.superposition_weights().unwrap();
            let fast: f64 = w.iter().zip(&s1[..m]).map(|(w, s)| w * s).sum();
            prop_assert!((fast - v(&s1[..m])).abs() <= 1e-9 * (fast.abs() + 1.0));

            let z = solver.thevenin(&s1[..m]).unwrap().z_out;
            let z_other = solver.thevenin(&s2[..m]).unwrap().z_out;
            prop_assert_eq!(z, z_other);
            let scaled = Solver::new(&net.scaled(c)).unwrap();
            prop_assert!((scaled.thevenin(&s1[..m]).unwrap().z_out - c * z).abs() <= 1e-9 * c * z);
            for (a, b) in scaled.superposition_weights().unwrap().iter().zip(&w) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
