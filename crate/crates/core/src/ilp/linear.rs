//! Pure 0-1 linear problems and the gate linearizer that produces them.

use std::collections::HashMap;
use std::fmt::Write as _;

pub type Var = usize;

/// A variable or its negation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Lit {
    pub var: Var,
    pub neg: bool,
}

impl Lit {
    pub fn pos(var: Var) -> Lit {
        Lit { var, neg: false }
    }

    pub fn neg(var: Var) -> Lit {
        Lit { var, neg: true }
    }

    pub fn not(self) -> Lit {
        Lit {
            var: self.var,
            neg: !self.neg,
        }
    }

    pub fn eval(self, x: &[bool]) -> bool {
        x[self.var] != self.neg
    }
}

/// Boolean value produced by the linearizer: folded to a constant or
/// carried by a literal.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Const(bool),
    Lit(Lit),
}

/// Definition of an auxiliary variable.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum AuxDef {
    Or(Vec<Lit>),
    And(Vec<Lit>),
    /// True iff fewer than `bound` of the literals hold.
    Below(Vec<Lit>, i64),
}

impl AuxDef {
    fn eval(&self, x: &[bool]) -> bool {
        match self {
            AuxDef::Or(l) => l.iter().any(|l| l.eval(x)),
            AuxDef::And(l) => l.iter().all(|l| l.eval(x)),
            AuxDef::Below(l, m) => (l.iter().filter(|l| l.eval(x)).count() as i64) < *m,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Origin {
    Overlap,
    Conflict,
    Gate,
    Cut,
}

/// `sum(coef * var) <= rhs`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Constraint {
    pub terms: Vec<(Var, i64)>,
    pub rhs: i64,
    pub origin: Origin,
}

impl Constraint {
    fn holds(&self, x: &[bool]) -> bool {
        let lhs: i64 = self.terms.iter().filter(|(v, _)| x[*v]).map(|(_, a)| a).sum();
        lhs <= self.rhs
    }
}

/// Minimize `constant + sum(objective[v] * x[v])` over 0-1 vectors subject
/// to every constraint. Variables `0..num_decisions` are decisions, the
/// rest are auxiliaries defined by `aux` in order.
#[derive(Clone, Debug, Default)]
pub struct IlpProblem {
    pub num_decisions: usize,
    pub aux: Vec<AuxDef>,
    pub objective: Vec<i64>,
    pub constant: i64,
    pub constraints: Vec<Constraint>,
    pub labels: Vec<String>,
}

impl IlpProblem {
    pub fn new(labels: Vec<String>) -> IlpProblem {
        IlpProblem {
            num_decisions: labels.len(),
            objective: vec![0; labels.len()],
            labels,
            ..IlpProblem::default()
        }
    }

    pub fn num_vars(&self) -> usize {
        self.num_decisions + self.aux.len()
    }

    /// Full assignment with every auxiliary at the value its definition
    /// forces.
    pub fn complete(&self, decisions: &[bool]) -> Vec<bool> {
        assert_eq!(decisions.len(), self.num_decisions);
        let mut x = decisions.to_vec();
        for def in &self.aux {
            let v = def.eval(&x);
            x.push(v);
        }
        x
    }

    pub fn objective_value(&self, x: &[bool]) -> i64 {
        self.constant
            + self
                .objective
                .iter()
                .zip(x)
                .filter(|(_, &b)| b)
                .map(|(c, _)| c)
                .sum::<i64>()
    }

    pub fn satisfied(&self, x: &[bool]) -> bool {
        self.constraints.iter().all(|c| c.holds(x))
    }

    pub fn add_constraint(&mut self, mut terms: Vec<(Var, i64)>, rhs: i64, origin: Origin) {
        terms.sort_unstable();
        let mut merged: Vec<(Var, i64)> = Vec::with_capacity(terms.len());
        for (v, a) in terms {
            match merged.last_mut() {
                Some((w, b)) if *w == v => *b += a,
                _ => merged.push((v, a)),
            }
        }
        merged.retain(|&(_, a)| a != 0);
        self.constraints.push(Constraint {
            terms: merged,
            rhs,
            origin,
        });
    }

    /// Forbids selecting all of `decisions` together.
    pub fn add_cut(&mut self, decisions: &[Var]) {
        let terms = decisions.iter().map(|&v| (v, 1)).collect();
        self.add_constraint(terms, decisions.len() as i64 - 1, Origin::Cut);
    }

    fn var_name(&self, v: Var) -> String {
        if v < self.num_decisions {
            format!("V{}", self.labels[v])
        } else {
            format!("y{}", v - self.num_decisions)
        }
    }

    fn lit_name(&self, l: Lit) -> String {
        if l.neg {
            format!("!{}", self.var_name(l.var))
        } else {
            self.var_name(l.var)
        }
    }

    fn linear_text(&self, terms: &[(Var, i64)]) -> String {
        if terms.is_empty() {
            return "0".to_string();
        }
        let mut out = String::new();
        for (k, &(v, a)) in terms.iter().enumerate() {
            let coef = if a.abs() == 1 {
                String::new()
            } else {
                format!("{} ", a.abs())
            };
            let sign = match (k, a < 0) {
                (0, true) => "-",
                (0, false) => "",
                (_, true) => " - ",
                (_, false) => " + ",
            };
            write!(out, "{sign}{coef}{}", self.var_name(v)).unwrap();
        }
        out
    }

    /// LP-style text: objective, constraints (sorted), auxiliary
    /// definitions and binaries.
    pub fn dump(&self) -> String {
        let mut out = String::from("minimize\n  obj: ");
        let terms: Vec<(Var, i64)> = self
            .objective
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0)
            .map(|(v, &c)| (v, c))
            .collect();
        out.push_str(&self.linear_text(&terms));
        if self.constant != 0 {
            write!(out, " {} {}", if self.constant < 0 { "-" } else { "+" }, self.constant.abs())
                .unwrap();
        }
        out.push_str("\nsubject to\n");
        let mut rows: Vec<String> = self
            .constraints
            .iter()
            .map(|c| {
                let tag = match c.origin {
                    Origin::Overlap => "oc",
                    Origin::Conflict => "cc",
                    Origin::Gate => "gate",
                    Origin::Cut => "cut",
                };
                format!("{tag}: {} <= {}", self.linear_text(&c.terms), c.rhs)
            })
            .collect();
        rows.sort();
        for r in rows {
            writeln!(out, "  {r}").unwrap();
        }
        if !self.aux.is_empty() {
            out.push_str("where\n");
            for (k, def) in self.aux.iter().enumerate() {
                let name = self.var_name(self.num_decisions + k);
                let text = match def {
                    AuxDef::Or(l) | AuxDef::And(l) => {
                        let op = if matches!(def, AuxDef::Or(_)) { " | " } else { " & " };
                        l.iter().map(|&l| self.lit_name(l)).collect::<Vec<_>>().join(op)
                    }
                    AuxDef::Below(l, m) => format!(
                        "[{} < {m}]",
                        l.iter().map(|&l| self.lit_name(l)).collect::<Vec<_>>().join(" + ")
                    ),
                };
                writeln!(out, "  {name} = {text}").unwrap();
            }
        }
        out.push_str("binary\n ");
        for v in 0..self.num_vars() {
            write!(out, " {}", self.var_name(v)).unwrap();
        }
        out.push_str("\nend\n");
        out
    }
}

/// Builds an [`IlpProblem`] from boolean gate expressions, introducing one
/// auxiliary per distinct gate.
#[derive(Debug)]
pub struct Linearizer {
    pub problem: IlpProblem,
    cache: HashMap<AuxDef, Var>,
}

impl Linearizer {
    pub fn new(labels: Vec<String>) -> Linearizer {
        Linearizer {
            problem: IlpProblem::new(labels),
            cache: HashMap::new(),
        }
    }

    pub fn finish(self) -> IlpProblem {
        self.problem
    }

    /// Adds `sum(coef * lit) <= rhs`, rewriting negated literals.
    fn add_lits(&mut self, terms: &[(Lit, i64)], mut rhs: i64) {
        let mut out = Vec::with_capacity(terms.len());
        for &(l, a) in terms {
            if l.neg {
                rhs -= a;
                out.push((l.var, -a));
            } else {
                out.push((l.var, a));
            }
        }
        self.problem.add_constraint(out, rhs, Origin::Gate);
    }

    fn aux(&mut self, def: AuxDef) -> (Var, bool) {
        if let Some(&v) = self.cache.get(&def) {
            return (v, false);
        }
        let v = self.problem.num_vars();
        self.problem.aux.push(def.clone());
        self.problem.objective.push(0);
        self.cache.insert(def, v);
        (v, true)
    }

    pub fn or(&mut self, gates: &[Gate]) -> Gate {
        let mut lits = Vec::new();
        for &g in gates {
            match g {
                Gate::Const(true) => return Gate::Const(true),
                Gate::Const(false) => {}
                Gate::Lit(l) => lits.push(l),
            }
        }
        lits.sort_unstable();
        lits.dedup();
        if lits.windows(2).any(|w| w[0].var == w[1].var) {
            return Gate::Const(true);
        }
        match lits.len() {
            0 => return Gate::Const(false),
            1 => return Gate::Lit(lits[0]),
            _ => {}
        }
        let (y, fresh) = self.aux(AuxDef::Or(lits.clone()));
        if fresh {
            let yl = Lit::pos(y);
            for &l in &lits {
                self.add_lits(&[(l, 1), (yl, -1)], 0);
            }
            let mut t: Vec<(Lit, i64)> = lits.iter().map(|&l| (l, -1)).collect();
            t.push((yl, 1));
            self.add_lits(&t, 0);
        }
        Gate::Lit(Lit::pos(y))
    }

    pub fn and(&mut self, gates: &[Gate]) -> Gate {
        let mut lits = Vec::new();
        for &g in gates {
            match g {
                Gate::Const(false) => return Gate::Const(false),
                Gate::Const(true) => {}
                Gate::Lit(l) => lits.push(l),
            }
        }
        lits.sort_unstable();
        lits.dedup();
        if lits.windows(2).any(|w| w[0].var == w[1].var) {
            return Gate::Const(false);
        }
        match lits.len() {
            0 => return Gate::Const(true),
            1 => return Gate::Lit(lits[0]),
            _ => {}
        }
        let k = lits.len() as i64;
        let (y, fresh) = self.aux(AuxDef::And(lits.clone()));
        if fresh {
            let yl = Lit::pos(y);
            for &l in &lits {
                self.add_lits(&[(yl, 1), (l, -1)], 0);
            }
            let mut t: Vec<(Lit, i64)> = lits.iter().map(|&l| (l, 1)).collect();
            t.push((yl, -1));
            self.add_lits(&t, k - 1);
        }
        Gate::Lit(Lit::pos(y))
    }

    /// Indicator of `(number of true gates) < bound`, big-M linearized.
    pub fn below(&mut self, gates: &[Gate], bound: i64) -> Gate {
        let mut m = bound;
        let mut lits = Vec::new();
        for &g in gates {
            match g {
                Gate::Const(true) => m -= 1,
                Gate::Const(false) => {}
                Gate::Lit(l) => lits.push(l),
            }
        }
        lits.sort_unstable();
        if m <= 0 {
            return Gate::Const(false);
        }
        let n = lits.len() as i64;
        if n < m {
            return Gate::Const(true);
        }
        let (z, fresh) = self.aux(AuxDef::Below(lits.clone(), m));
        if fresh {
            let zl = Lit::pos(z);
            // sum + m z >= m
            let mut t: Vec<(Lit, i64)> = lits.iter().map(|&l| (l, -1)).collect();
            t.push((zl, -m));
            self.add_lits(&t, -m);
            // sum + (n - m + 1) z <= n
            let mut t: Vec<(Lit, i64)> = lits.iter().map(|&l| (l, 1)).collect();
            t.push((zl, n - m + 1));
            self.add_lits(&t, n);
        }
        Gate::Lit(Lit::pos(z))
    }

    pub fn add_term(&mut self, coef: i64, gate: Gate) {
        let p = &mut self.problem;
        match gate {
            Gate::Const(false) => {}
            Gate::Const(true) => p.constant += coef,
            Gate::Lit(l) if l.neg => {
                p.constant += coef;
                p.objective[l.var] -= coef;
            }
            Gate::Lit(l) => p.objective[l.var] += coef,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|k| format!("d{k}")).collect()
    }

    /// Every assignment of the decisions: the unique feasible completion
    /// must be the forced one, and every other auxiliary choice infeasible.
    fn check_exact(p: &IlpProblem, truth: impl Fn(&[bool]) -> bool, gate: Gate) {
        let n = p.num_decisions;
        let m = p.num_vars();
        for bits in 0..1u32 << n {
            let d: Vec<bool> = (0..n).map(|k| bits >> k & 1 == 1).collect();
            let want = truth(&d);
            let got = match gate {
                Gate::Const(c) => c,
                Gate::Lit(l) => l.eval(&p.complete(&d)),
            };
            assert_eq!(got, want, "decisions {d:?}");
            let mut feasible = 0;
            for aux in 0..1u32 << (m - n) {
                let mut x = d.clone();
                x.extend((0..m - n).map(|k| aux >> k & 1 == 1));
                if p.satisfied(&x) {
                    feasible += 1;
                    assert_eq!(x, p.complete(&d));
                }
            }
            assert_eq!(feasible, 1);
        }
    }

    #[test]
    fn or_truth_tables() {
        for k in 2..=3 {
            let mut lz = Linearizer::new(labels(k));
            let gates: Vec<Gate> = (0..k).map(|v| Gate::Lit(Lit::pos(v))).collect();
            let g = lz.or(&gates);
            let p = lz.finish();
            assert_eq!(p.aux.len(), 1);
            assert_eq!(p.constraints.len(), k + 1);
            check_exact(&p, |d| d.iter().any(|&b| b), g);
        }
    }

    #[test]
    fn and_with_negation() {
        let mut lz = Linearizer::new(labels(3));
        let gates = [
            Gate::Lit(Lit::neg(0)),
            Gate::Lit(Lit::pos(1)),
            Gate::Lit(Lit::pos(2)),
        ];
        let g = lz.and(&gates);
        let p = lz.finish();
        check_exact(&p, |d| !d[0] && d[1] && d[2], g);
    }

    #[test]
    fn threshold_truth_tables() {
        for n in 1..=4 {
            for m in 1..=n as i64 {
                let mut lz = Linearizer::new(labels(n));
                let gates: Vec<Gate> = (0..n).map(|v| Gate::Lit(Lit::pos(v))).collect();
                let g = lz.below(&gates, m);
                let p = lz.finish();
                check_exact(&p, |d| (d.iter().filter(|&&b| b).count() as i64) < m, g);
            }
        }
    }

    #[test]
    fn constant_folding() {
        let mut lz = Linearizer::new(labels(2));
        let x = Gate::Lit(Lit::pos(0));
        assert_eq!(lz.or(&[x, Gate::Const(true)]), Gate::Const(true));
        assert_eq!(lz.or(&[x, Gate::Const(false)]), x);
        assert_eq!(lz.or(&[]), Gate::Const(false));
        assert_eq!(lz.and(&[x, Gate::Const(true)]), x);
        assert_eq!(lz.and(&[x, Gate::Lit(Lit::neg(0))]), Gate::Const(false));
        assert_eq!(lz.below(&[x, Gate::Const(false)], 2), Gate::Const(true));
        assert_eq!(lz.below(&[x, Gate::Const(true)], 1), Gate::Const(false));
        lz.add_term(5, Gate::Const(true));
        lz.add_term(3, Gate::Lit(Lit::neg(1)));
        let p = lz.finish();
        assert!(p.aux.is_empty());
        assert_eq!(p.constant, 8);
        assert_eq!(p.objective, vec![0, -3]);
    }

    #[test]
    fn gates_are_shared() {
        let mut lz = Linearizer::new(labels(2));
        let gates = [Gate::Lit(Lit::pos(0)), Gate::Lit(Lit::pos(1))];
        let a = lz.or(&gates);
        let b = lz.or(&[gates[1], gates[0]]);
        assert_eq!(a, b);
        assert_eq!(lz.finish().aux.len(), 1);
    }
}
