use std::fmt;

use super::{Function, Opcode, Statement};

impl Function {
    pub(crate) fn fmt_stmt(&self, s: &Statement, out: &mut impl fmt::Write) -> fmt::Result {
        let ty = s.ty;
        let mem = |out: &mut dyn fmt::Write| -> fmt::Result {
            let m = s.mem.expect("memory statement without memref");
            write!(out, "{}[{}]", self.array(m.array).name, m.index)
        };
        match s.opcode {
            Opcode::Store => {
                out.write_str("store ")?;
                mem(out)?;
                write!(out, ", {} : {ty}", self.label(s.operands[0]))
            }
            Opcode::Load => {
                write!(out, "{} = load ", self.label(s.id))?;
                mem(out)?;
                write!(out, " : {ty}")
            }
            Opcode::Const => write!(
                out,
                "{} = const {} : {ty}",
                self.label(s.id),
                s.literal.expect("const without literal")
            ),
            op => write!(
                out,
                "{} = {op} {}, {} : {ty}",
                self.label(s.id),
                self.label(s.operands[0]),
                self.label(s.operands[1])
            ),
        }
    }
}

/// Canonical text; parsing it yields an equal function.
impl fmt::Display for Function {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "func {} {{", self.name)?;
        for a in &self.arrays {
            writeln!(f, "  array {} : {} x {}", a.name, a.elem, a.len)?;
        }
        if !self.exports.is_empty() {
            let names: Vec<String> = self.exports.iter().map(|&e| self.label(e)).collect();
            writeln!(f, "  export {}", names.join(", "))?;
        }
        for b in &self.blocks {
            writeln!(f, "  block {}:", b.name)?;
            for &id in &b.stmts {
                f.write_str("    ")?;
                self.fmt_stmt(self.stmt(id), f)?;
                f.write_str("\n")?;
            }
            if let Some(t) = b.branch {
                writeln!(f, "    br {}", self.block(t).name)?;
            }
        }
        f.write_str("}\n")
    }
}
