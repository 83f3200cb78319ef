//! Reference interpreters for scalar and vectorized functions.

use std::fmt;

use thiserror::Error;

use crate::emit::{Elem, VInst, VectorFunction};
use crate::ir::{Function, Opcode, Scalar, StmtId};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("read of uninitialized {array}[{index}]")]
    Uninitialized { array: String, index: u32 },
    #[error("division by zero")]
    DivByZero,
}

impl ExecError {
    pub fn kind(&self) -> &'static str {
        match self {
            ExecError::Uninitialized { .. } => "uninitialized",
            ExecError::DivByZero => "div-by-zero",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Config {
    /// Trap on floating-point division by zero instead of producing an
    /// infinity or NaN. Integer division by zero always traps.
    pub trap_float_div: bool,
}

/// Array contents plus the final value of every exported name.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MachineState {
    pub arrays: Vec<Vec<Option<Scalar>>>,
    pub exports: Vec<Option<Scalar>>,
}

impl MachineState {
    /// Every element uninitialized.
    pub fn empty(f: &Function) -> MachineState {
        MachineState {
            arrays: f.arrays.iter().map(|a| vec![None; a.len as usize]).collect(),
            exports: Vec::new(),
        }
    }

    pub fn display<'a>(&'a self, f: &'a Function) -> StateDisplay<'a> {
        StateDisplay { state: self, f }
    }
}

pub struct StateDisplay<'a> {
    state: &'a MachineState,
    f: &'a Function,
}

impl fmt::Display for StateDisplay<'_> {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (a, vals) in self.f.arrays.iter().zip(&self.state.arrays) {
            let parts: Vec<String> = vals
                .iter()
                .map(|v| v.map_or_else(|| "_".to_string(), |x| x.to_string()))
                .collect();
            writeln!(out, "array {} = {}", a.name, parts.join(","))?;
        }
        for (&e, v) in self.f.exports.iter().zip(&self.state.exports) {
            let text = v.map_or_else(|| "_".to_string(), |x| x.to_string());
            writeln!(out, "export {} = {text}", self.f.label(e))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("line {line}: {msg}")]
pub struct InputError {
    pub line: usize,
    pub msg: String,
}

/// Reads `array <name> = v1,v2,...` lines; `_` leaves an element
/// uninitialized and arrays not mentioned stay uninitialized.
pub fn parse_state(f: &Function, text: &str) -> Result<MachineState, InputError> {
    let mut st = MachineState::empty(f);
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| InputError { line: k + 1, msg };
        let rest = line
            .strip_prefix("array")
            .ok_or_else(|| err("expected `array <name> = values`".into()))?;
        let (name, vals) = rest
            .split_once('=')
            .ok_or_else(|| err("missing `=`".into()))?;
        let name = name.trim();
        let id = f
            .array_by_name(name)
            .ok_or_else(|| err(format!("unknown array {name}")))?;
        let decl = f.array(id);
        let vals: Vec<&str> = vals.split(',').map(str::trim).collect();
        if vals.len() != decl.len as usize {
            return Err(err(format!(
                "array {name} has {} elements, got {}",
                decl.len,
                vals.len()
            )));
        }
        for (i, v) in vals.iter().enumerate() {
            st.arrays[id.index()][i] = if *v == "_" {
                None
            } else {
                Some(Scalar::parse(v, decl.elem).ok_or_else(|| err(format!("bad {} value {v}", decl.elem)))?)
            };
        }
    }
    Ok(st)
}

/// One lane of an arithmetic opcode. Integers wrap.
pub fn eval_binary(op: Opcode, a: Scalar, b: Scalar, cfg: Config) -> Result<Scalar, ExecError> {
    use Scalar::*;
    let r = match (op, a, b) {
        (Opcode::Add, I32(x), I32(y)) => I32(x.wrapping_add(y)),
        (Opcode::Add, I64(x), I64(y)) => I64(x.wrapping_add(y)),
        (Opcode::Sub, I32(x), I32(y)) => I32(x.wrapping_sub(y)),
        (Opcode::Sub, I64(x), I64(y)) => I64(x.wrapping_sub(y)),
        (Opcode::Mul, I32(x), I32(y)) => I32(x.wrapping_mul(y)),
        (Opcode::Mul, I64(x), I64(y)) => I64(x.wrapping_mul(y)),
        (Opcode::Div, I32(_), I32(0)) => return Err(ExecError::DivByZero),
        (Opcode::Div, I32(x), I32(y)) => I32(x.wrapping_div(y)),
        (Opcode::Div, I64(_), I64(0)) => return Err(ExecError::DivByZero),
        (Opcode::Div, I64(x), I64(y)) => I64(x.wrapping_div(y)),
        (Opcode::FAdd, F32(x), F32(y)) => F32(x + y),
        (Opcode::FAdd, F64(x), F64(y)) => F64(x + y),
        (Opcode::FSub, F32(x), F32(y)) => F32(x - y),
        (Opcode::FSub, F64(x), F64(y)) => F64(x - y),
        (Opcode::FMul, F32(x), F32(y)) => F32(x * y),
        (Opcode::FMul, F64(x), F64(y)) => F64(x * y),
        (Opcode::FDiv, F32(x), F32(y)) => {
            if cfg.trap_float_div && y == 0.0 {
                return Err(ExecError::DivByZero);
            }
            F32(x / y)
        }
        (Opcode::FDiv, F64(x), F64(y)) => {
            if cfg.trap_float_div && y == 0.0 {
                return Err(ExecError::DivByZero);
            }
            F64(x / y)
        }
        _ => panic!("ill-typed {op} on {a:?}, {b:?}"),
    };
    Ok(r)
}

struct Machine<'f> {
    f: &'f Function,
    cfg: Config,
    arrays: Vec<Vec<Option<Scalar>>>,
    values: Vec<Option<Scalar>>,
}

impl Machine<'_> {
    fn value(&self, s: StmtId) -> Scalar {
        self.values[s.index()].unwrap_or_else(|| panic!("{} read before definition", self.f.label(s)))
    }

    fn load(&self, array: usize, index: u32) -> Result<Scalar, ExecError> {
        self.arrays[array][index as usize].ok_or_else(|| ExecError::Uninitialized {
            array: self.f.arrays[array].name.clone(),
            index,
        })
    }

    fn step(&mut self, s: StmtId) -> Result<(), ExecError> {
        let st = self.f.stmt(s);
        let v = match st.opcode {
            Opcode::Const => st.literal.unwrap(),
            Opcode::Load => {
                let m = st.mem.unwrap();
                self.load(m.array.index(), m.index)?
            }
            Opcode::Store => {
                let m = st.mem.unwrap();
                self.arrays[m.array.index()][m.index as usize] = Some(self.value(st.operands[0]));
                return Ok(());
            }
            op => eval_binary(op, self.value(st.operands[0]), self.value(st.operands[1]), self.cfg)?,
        };
        self.values[s.index()] = Some(v);
        Ok(())
    }

    fn finish(self) -> MachineState {
        MachineState {
            exports: self.f.exports.iter().map(|e| self.values[e.index()]).collect(),
            arrays: self.arrays,
        }
    }
}

/// Runs every block in order.
pub fn run_scalar(f: &Function, init: &MachineState, cfg: Config) -> Result<MachineState, ExecError> {
    let mut m = Machine {
        f,
        cfg,
        arrays: init.arrays.clone(),
        values: vec![None; f.len()],
    };
    for b in &f.blocks {
        for &s in &b.stmts {
            m.step(s)?;
        }
    }
    Ok(m.finish())
}

pub fn run_vector(vf: &VectorFunction, init: &MachineState, cfg: Config) -> Result<MachineState, ExecError> {
    let f = &vf.source;
    let mut m = Machine {
        f,
        cfg,
        arrays: init.arrays.clone(),
        values: vec![None; f.len()],
    };
    let mut regs: Vec<Option<Vec<Scalar>>> = vec![None; vf.num_vregs as usize];
    let reg = |regs: &[Option<Vec<Scalar>>], r: crate::emit::VReg| -> Vec<Scalar> {
        regs[r.0 as usize].clone().expect("vector register read before definition")
    };
    for b in &vf.blocks {
        for inst in &b.insts {
            match inst {
                VInst::Scalar(s) => m.step(*s)?,
                VInst::VLoad { dst, array, base, lanes, .. } => {
                    let v = (0..*lanes as u32)
                        .map(|i| m.load(array.index(), base + i))
                        .collect::<Result<Vec<_>, _>>()?;
                    regs[dst.0 as usize] = Some(v);
                }
                VInst::VStore { src, array, base, lanes, .. } => {
                    let v = reg(&regs, *src);
                    assert_eq!(v.len(), *lanes, "lane count mismatch");
                    for (i, x) in v.into_iter().enumerate() {
                        m.arrays[array.index()][*base as usize + i] = Some(x);
                    }
                }
                VInst::VOp { dst, op, a, b, lanes, .. } => {
                    let (va, vb) = (reg(&regs, *a), reg(&regs, *b));
                    assert!(va.len() == *lanes && vb.len() == *lanes, "lane count mismatch");
                    let v = va
                        .into_iter()
                        .zip(vb)
                        .map(|(x, y)| eval_binary(*op, x, y, cfg))
                        .collect::<Result<Vec<_>, _>>()?;
                    regs[dst.0 as usize] = Some(v);
                }
                VInst::Pack { dst, elems, lanes, .. } => {
                    let mut v = Vec::with_capacity(*lanes);
                    for e in elems {
                        match e {
                            Elem::Scalar(s) => v.push(m.value(*s)),
                            Elem::Vector(r) => v.extend(reg(&regs, *r)),
                        }
                    }
                    assert_eq!(v.len(), *lanes, "lane count mismatch");
                    regs[dst.0 as usize] = Some(v);
                }
                VInst::Extract { dst, src, lane, .. } => {
                    m.values[dst.index()] = Some(reg(&regs, *src)[*lane]);
                }
                VInst::Perm { dst, src, mask, .. } => {
                    let v = reg(&regs, *src);
                    assert_eq!(v.len(), mask.len(), "lane count mismatch");
                    regs[dst.0 as usize] = Some(mask.iter().map(|&i| v[i]).collect());
                }
            }
        }
    }
    Ok(m.finish())
}

/// Whether two runs agree: equal final states, or failures of one kind.
pub fn equivalent(a: &Result<MachineState, ExecError>, b: &Result<MachineState, ExecError>) -> bool {
    match (a, b) {
        (Ok(x), Ok(y)) => x == y,
        (Err(x), Err(y)) => x.kind() == y.kind(),
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{parse_function, DepGraph};
    use crate::packing::PackSet;

    #[test]
    fn perm_identity_by_hand() {
        let f = parse_function(include_str!("../programs/perm_identity.ir")).unwrap();
        let init = parse_state(&f, "array L = _,1,2,3,4\n").unwrap();
        let out = run_scalar(&f, &init, Config::default()).unwrap();
        let s = f.array_by_name("S").unwrap().index();
        assert_eq!(out.arrays[s], vec![Some(Scalar::F64(1.0 / 3.0)), Some(Scalar::F64(2.0 / 4.0))]);

        let g = DepGraph::build(&f);
        let vf = crate::emit::emit(&f, &g, &PackSet::default(), &[]);
        assert_eq!(run_vector(&vf, &init, Config::default()), Ok(out));
    }

    #[test]
    fn errors() {
        let f = parse_function("func e {\n}\n").unwrap();
        let st = MachineState::empty(&f);
        assert_eq!(run_scalar(&f, &st, Config::default()), Ok(st));

        let text = "func d {\n  array A : i32 x 2\n  block b:\n    %x = load A[0] : i32\n    %y = load A[1] : i32\n    %q = div %x, %y : i32\n}\n";
        let f = parse_function(text).unwrap();
        let st = parse_state(&f, "array A = 4,0").unwrap();
        assert_eq!(run_scalar(&f, &st, Config::default()), Err(ExecError::DivByZero));
        let st = parse_state(&f, "array A = 4,_").unwrap();
        assert!(matches!(
            run_scalar(&f, &st, Config::default()),
            Err(ExecError::Uninitialized { index: 1, .. })
        ));
        assert!(parse_state(&f, "array B = 1,2").is_err());
        assert!(parse_state(&f, "array A = 1").is_err());
    }

    #[test]
    fn float_division_traps_only_when_asked() {
        let one = Scalar::F64(1.0);
        let zero = Scalar::F64(0.0);
        assert_eq!(
            eval_binary(Opcode::FDiv, one, zero, Config::default()),
            Ok(Scalar::F64(f64::INFINITY))
        );
        let trap = Config { trap_float_div: true };
        assert_eq!(eval_binary(Opcode::FDiv, one, zero, trap), Err(ExecError::DivByZero));
        assert_eq!(
            eval_binary(Opcode::Div, Scalar::I32(i32::MIN), Scalar::I32(-1), trap),
            Ok(Scalar::I32(i32::MIN))
        );
    }
}
