use std::collections::HashMap;

use thiserror::Error;

use super::{
    ArrayDecl, ArrayId, BasicBlock, BlockId, Function, MemRef, Opcode, Scalar, Statement, StmtId,
    Type,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown array `{0}`")]
    UnknownArray(String),
    #[error("unknown block `{0}`")]
    UnknownBlock(String),
    #[error("use of `%{0}` before its definition")]
    UseBeforeDef(String),
    #[error("undefined value `%{0}`")]
    UndefinedValue(String),
    #[error("index {index} out of bounds for `{array}` of length {len}")]
    IndexOutOfBounds { array: String, index: u64, len: u32 },
    #[error("type error: {0}")]
    Type(String),
    #[error("duplicate definition of `{0}`")]
    Duplicate(String),
    #[error("invalid control flow: {0}")]
    ControlFlow(String),
}

fn err(line: usize, kind: ParseErrorKind) -> ParseError {
    ParseError { line, kind }
}

fn syntax(line: usize, msg: impl Into<String>) -> ParseError {
    err(line, ParseErrorKind::Syntax(msg.into()))
}

const PUNCT: &[char] = &['[', ']', ',', ':', '=', '{', '}'];

fn tokenize(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() || PUNCT.contains(&c) {
            if let Some(s) = start.take() {
                out.push(&text[s..i]);
            }
            if !c.is_whitespace() {
                out.push(&text[i..i + c.len_utf8()]);
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(&text[s..]);
    }
    out
}

fn strip_comment(line: &str) -> &str {
    let cut = [line.find('#'), line.find("//")]
        .into_iter()
        .flatten()
        .min()
        .unwrap_or(line.len());
    &line[..cut]
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

struct Cursor<'a> {
    toks: Vec<&'a str>,
    pos: usize,
    line: usize,
}

impl<'a> Cursor<'a> {
    fn next(&mut self, what: &str) -> Result<&'a str, ParseError> {
        let t = self
            .toks
            .get(self.pos)
            .copied()
            .ok_or_else(|| syntax(self.line, format!("expected {what}, found end of line")))?;
        self.pos += 1;
        Ok(t)
    }

    fn expect(&mut self, tok: &str) -> Result<(), ParseError> {
        let t = self.next(&format!("`{tok}`"))?;
        if t == tok {
            Ok(())
        } else {
            Err(syntax(self.line, format!("expected `{tok}`, found `{t}`")))
        }
    }

    fn ident(&mut self, what: &str) -> Result<&'a str, ParseError> {
        let t = self.next(what)?;
        if is_ident(t) {
            Ok(t)
        } else {
            Err(syntax(self.line, format!("expected {what}, found `{t}`")))
        }
    }

    fn value(&mut self) -> Result<&'a str, ParseError> {
        let t = self.next("value")?;
        match t.strip_prefix('%') {
            Some(name) if is_ident(name) => Ok(name),
            _ => Err(syntax(self.line, format!("expected `%value`, found `{t}`"))),
        }
    }

    fn uint(&mut self, what: &str) -> Result<u64, ParseError> {
        let t = self.next(what)?;
        t.parse()
            .map_err(|_| syntax(self.line, format!("expected {what}, found `{t}`")))
    }

    fn ty(&mut self) -> Result<Type, ParseError> {
        let t = self.next("type")?;
        Type::from_name(t).ok_or_else(|| syntax(self.line, format!("unknown type `{t}`")))
    }

    fn memref(&mut self) -> Result<(&'a str, u64), ParseError> {
        let a = self.ident("array name")?;
        self.expect("[")?;
        let k = self.uint("element index")?;
        self.expect("]")?;
        Ok((a, k))
    }

    fn end(&self) -> Result<(), ParseError> {
        match self.toks.get(self.pos) {
            None => Ok(()),
            Some(t) => Err(syntax(self.line, format!("unexpected `{t}`"))),
        }
    }
}

struct RawStmt<'a> {
    line: usize,
    name: Option<&'a str>,
    opcode: Opcode,
    ty: Type,
    operands: Vec<&'a str>,
    mem: Option<(&'a str, u64)>,
    literal: Option<&'a str>,
    block: usize,
}

struct RawBlock<'a> {
    line: usize,
    name: &'a str,
    stmts: Vec<usize>,
    branch: Option<(usize, &'a str)>,
}

fn parse_stmt<'a>(c: &mut Cursor<'a>, block: usize) -> Result<RawStmt<'a>, ParseError> {
    let line = c.line;
    let first = c.toks[0];
    if first == "store" {
        c.pos = 1;
        let mem = c.memref()?;
        c.expect(",")?;
        let v = c.value()?;
        c.expect(":")?;
        let ty = c.ty()?;
        c.end()?;
        return Ok(RawStmt {
            line,
            name: None,
            opcode: Opcode::Store,
            ty,
            operands: vec![v],
            mem: Some(mem),
            literal: None,
            block,
        });
    }
    let name = c.value()?;
    c.expect("=")?;
    let op_tok = c.next("opcode")?;
    let opcode = Opcode::from_mnemonic(op_tok)
        .filter(|&op| op != Opcode::Store)
        .ok_or_else(|| syntax(line, format!("unknown opcode `{op_tok}`")))?;
    let mut raw = RawStmt {
        line,
        name: Some(name),
        opcode,
        ty: Type::I32,
        operands: Vec::new(),
        mem: None,
        literal: None,
        block,
    };
    match opcode {
        Opcode::Load => raw.mem = Some(c.memref()?),
        Opcode::Const => raw.literal = Some(c.next("literal")?),
        _ => {
            raw.operands.push(c.value()?);
            c.expect(",")?;
            raw.operands.push(c.value()?);
        }
    }
    c.expect(":")?;
    raw.ty = c.ty()?;
    c.end()?;
    Ok(raw)
}

/// Parses the textual IR into a validated [`Function`].
pub fn parse_function(text: &str) -> Result<Function, ParseError> {
    let mut name: Option<&str> = None;
    let mut closed = false;
    let mut arrays: Vec<(usize, ArrayDecl)> = Vec::new();
    let mut exports: Vec<(usize, &str)> = Vec::new();
    let mut blocks: Vec<RawBlock> = Vec::new();
    let mut stmts: Vec<RawStmt> = Vec::new();
    let mut last_line = 0;

    for (i, raw_line) in text.lines().enumerate() {
        let line = i + 1;
        last_line = line;
        let toks = tokenize(strip_comment(raw_line));
        if toks.is_empty() {
            continue;
        }
        let mut c = Cursor { toks, pos: 0, line };
        if closed {
            return Err(syntax(line, "text after the closing `}`"));
        }
        if name.is_none() {
            c.expect("func")?;
            name = Some(c.ident("function name")?);
            c.expect("{")?;
            c.end()?;
            continue;
        }
        match c.toks[0] {
            "}" => {
                c.pos = 1;
                c.end()?;
                closed = true;
            }
            "array" => {
                if !blocks.is_empty() {
                    return Err(syntax(line, "array declarations must precede blocks"));
                }
                c.pos = 1;
                let a = c.ident("array name")?;
                c.expect(":")?;
                let elem = c.ty()?;
                c.expect("x")?;
                let len = c.uint("array length")?;
                c.end()?;
                let len = u32::try_from(len).map_err(|_| syntax(line, "array too long"))?;
                arrays.push((
                    line,
                    ArrayDecl {
                        name: a.to_string(),
                        elem,
                        len,
                    },
                ));
            }
            "export" => {
                if !blocks.is_empty() {
                    return Err(syntax(line, "export lists must precede blocks"));
                }
                c.pos = 1;
                loop {
                    exports.push((line, c.value()?));
                    if c.pos == c.toks.len() {
                        break;
                    }
                    c.expect(",")?;
                }
            }
            "block" => {
                c.pos = 1;
                let b = c.ident("block name")?;
                c.expect(":")?;
                c.end()?;
                blocks.push(RawBlock {
                    line,
                    name: b,
                    stmts: Vec::new(),
                    branch: None,
                });
            }
            "br" => {
                let blk = blocks
                    .last_mut()
                    .ok_or_else(|| syntax(line, "`br` outside of a block"))?;
                if blk.branch.is_some() {
                    return Err(syntax(line, "block already has a terminator"));
                }
                c.pos = 1;
                let target = c.ident("block name")?;
                c.end()?;
                blk.branch = Some((line, target));
            }
            _ => {
                let bi = blocks.len().checked_sub(1).ok_or_else(|| {
                    syntax(line, "statement outside of a block")
                })?;
                if blocks[bi].branch.is_some() {
                    return Err(syntax(line, "statement after the block terminator"));
                }
                let s = parse_stmt(&mut c, bi)?;
                blocks[bi].stmts.push(stmts.len());
                stmts.push(s);
            }
        }
    }
    let Some(name) = name else {
        return Err(syntax(last_line.max(1), "expected `func`"));
    };
    if !closed {
        return Err(syntax(last_line, "missing closing `}`"));
    }

    // Arrays and blocks.
    let mut array_ids: HashMap<String, ArrayId> = HashMap::new();
    for (k, (line, a)) in arrays.iter().enumerate() {
        if array_ids.insert(a.name.clone(), ArrayId(k as u32)).is_some() {
            return Err(err(*line, ParseErrorKind::Duplicate(a.name.clone())));
        }
    }
    let mut block_ids: HashMap<&str, usize> = HashMap::new();
    for (k, b) in blocks.iter().enumerate() {
        if block_ids.insert(b.name, k).is_some() {
            return Err(err(b.line, ParseErrorKind::Duplicate(b.name.to_string())));
        }
    }

    // Value names: position of each definition.
    let mut defs: HashMap<&str, usize> = HashMap::new();
    for (k, s) in stmts.iter().enumerate() {
        if let Some(n) = s.name {
            if defs.insert(n, k).is_some() {
                return Err(err(s.line, ParseErrorKind::Duplicate(format!("%{n}"))));
            }
        }
    }
    let resolve = |line: usize, user: usize, n: &str| -> Result<StmtId, ParseError> {
        match defs.get(n) {
            Some(&d) if d < user => Ok(StmtId(d as u32)),
            Some(_) => Err(err(line, ParseErrorKind::UseBeforeDef(n.to_string()))),
            None => Err(err(line, ParseErrorKind::UndefinedValue(n.to_string()))),
        }
    };

    let array_decls: Vec<ArrayDecl> = arrays.into_iter().map(|(_, a)| a).collect();
    let mut out: Vec<Statement> = Vec::with_capacity(stmts.len());
    for (k, s) in stmts.iter().enumerate() {
        let line = s.line;
        if !s.opcode.accepts(s.ty) {
            return Err(err(
                line,
                ParseErrorKind::Type(format!("`{}` is not defined on {}", s.opcode, s.ty)),
            ));
        }
        let mut operands = Vec::with_capacity(s.operands.len());
        for n in &s.operands {
            let id = resolve(line, k, n)?;
            let oty = out[id.index()].ty;
            if oty != s.ty {
                return Err(err(
                    line,
                    ParseErrorKind::Type(format!("operand `%{n}` is {oty}, expected {}", s.ty)),
                ));
            }
            operands.push(id);
        }
        let mem = match s.mem {
            None => None,
            Some((a, index)) => {
                let &aid = array_ids
                    .get(a)
                    .ok_or_else(|| err(line, ParseErrorKind::UnknownArray(a.to_string())))?;
                let decl = &array_decls[aid.index()];
                if index >= decl.len as u64 {
                    return Err(err(
                        line,
                        ParseErrorKind::IndexOutOfBounds {
                            array: a.to_string(),
                            index,
                            len: decl.len,
                        },
                    ));
                }
                if decl.elem != s.ty {
                    return Err(err(
                        line,
                        ParseErrorKind::Type(format!(
                            "`{a}` holds {}, access is {}",
                            decl.elem, s.ty
                        )),
                    ));
                }
                Some(MemRef {
                    array: aid,
                    index: index as u32,
                })
            }
        };
        let literal = match s.literal {
            None => None,
            Some(t) => Some(Scalar::parse(t, s.ty).ok_or_else(|| {
                err(
                    line,
                    ParseErrorKind::Type(format!("`{t}` is not a valid {} literal", s.ty)),
                )
            })?),
        };
        out.push(Statement {
            id: StmtId(k as u32),
            name: s.name.map(str::to_string),
            block: BlockId(s.block as u32),
            opcode: s.opcode,
            ty: s.ty,
            operands,
            mem,
            literal,
        });
    }

    let mut export_ids = Vec::new();
    for &(line, n) in &exports {
        let id = *defs
            .get(n)
            .ok_or_else(|| err(line, ParseErrorKind::UndefinedValue(n.to_string())))?;
        let id = StmtId(id as u32);
        if !export_ids.contains(&id) {
            export_ids.push(id);
        }
    }

    // Control flow: a chain from the entry block, forward edges only, with
    // every block reachable.
    let mut out_blocks = Vec::with_capacity(blocks.len());
    for (k, b) in blocks.iter().enumerate() {
        let branch = match b.branch {
            None => None,
            Some((line, t)) => {
                let &target = block_ids
                    .get(t)
                    .ok_or_else(|| err(line, ParseErrorKind::UnknownBlock(t.to_string())))?;
                if target <= k {
                    return Err(err(
                        line,
                        ParseErrorKind::ControlFlow(format!(
                            "branch from `{}` to `{t}` does not go forward",
                            b.name
                        )),
                    ));
                }
                Some(BlockId(target as u32))
            }
        };
        out_blocks.push(BasicBlock {
            name: b.name.to_string(),
            stmts: b.stmts.iter().map(|&i| StmtId(i as u32)).collect(),
            branch,
        });
    }
    let mut reached = vec![false; out_blocks.len()];
    let mut cur = (!out_blocks.is_empty()).then_some(0);
    while let Some(k) = cur {
        reached[k] = true;
        cur = match out_blocks[k].branch {
            Some(t) => Some(t.index()),
            None if k + 1 < out_blocks.len() => Some(k + 1),
            None => None,
        };
    }
    if let Some(k) = reached.iter().position(|r| !r) {
        return Err(err(
            blocks[k].line,
            ParseErrorKind::ControlFlow(format!("block `{}` is unreachable", blocks[k].name)),
        ));
    }

    Ok(Function::from_parts(
        name.to_string(),
        array_decls,
        export_ids,
        out_blocks,
        out,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kind(text: &str) -> ParseErrorKind {
        parse_function(text).unwrap_err().kind
    }

    #[test]
    fn empty_function() {
        let f = parse_function("func empty {\n}\n").unwrap();
        assert_eq!(f.len(), 0);
        assert!(f.blocks.is_empty());
    }

    #[test]
    fn unknown_array() {
        let text = "func f {\n  block b:\n    %x = load Q[0] : f64\n}\n";
        let e = parse_function(text).unwrap_err();
        assert_eq!(e.line, 3);
        assert_eq!(e.kind, ParseErrorKind::UnknownArray("Q".into()));
        assert!(e.to_string().contains("unknown array"));
    }

    #[test]
    fn use_before_def_and_undefined() {
        let text = "func f {\n  block b:\n    %x = add %y, %y : i32\n    %y = const 1 : i32\n}\n";
        assert_eq!(kind(text), ParseErrorKind::UseBeforeDef("y".into()));
        let text = "func f {\n  block b:\n    %x = add %y, %y : i32\n}\n";
        assert_eq!(kind(text), ParseErrorKind::UndefinedValue("y".into()));
    }

    #[test]
    fn index_out_of_bounds() {
        let text = "func f {\n  array A : i32 x 2\n  block b:\n    %x = load A[2] : i32\n}\n";
        assert!(matches!(
            kind(text),
            ParseErrorKind::IndexOutOfBounds { index: 2, len: 2, .. }
        ));
    }

    #[test]
    fn syntax_error_reports_line() {
        let text = "func f {\n  block b:\n\n    %x = const 1 i32\n}\n";
        let e = parse_function(text).unwrap_err();
        assert_eq!(e.line, 4);
        assert!(matches!(e.kind, ParseErrorKind::Syntax(_)));
    }

    #[test]
    fn type_errors() {
        let text = "func f {\n  block b:\n    %x = const 1 : i32\n    %y = fadd %x, %x : i32\n}\n";
        assert!(matches!(kind(text), ParseErrorKind::Type(_)));
        let text = "func f {\n  block b:\n    %x = const 1 : i32\n    %y = add %x, %x : i64\n}\n";
        assert!(matches!(kind(text), ParseErrorKind::Type(_)));
        let text = "func f {\n  array A : f32 x 1\n  block b:\n    %x = load A[0] : f64\n}\n";
        assert!(matches!(kind(text), ParseErrorKind::Type(_)));
        let text = "func f {\n  block b:\n    %x = const 1.5 : i32\n}\n";
        assert!(matches!(kind(text), ParseErrorKind::Type(_)));
    }

    #[test]
    fn control_flow_checks() {
        let text = "func f {\n  block a:\n    br c\n  block b:\n  block c:\n}\n";
        assert!(matches!(kind(text), ParseErrorKind::ControlFlow(_)));
        let text = "func f {\n  block a:\n  block b:\n    br a\n}\n";
        assert!(matches!(kind(text), ParseErrorKind::ControlFlow(_)));
        let text = "func f {\n  block a:\n    br z\n}\n";
        assert_eq!(kind(text), ParseErrorKind::UnknownBlock("z".into()));
        let text = "func f {\n  block a:\n    br b\n  block b:\n    br c\n  block c:\n}\n";
        assert!(parse_function(text).is_ok());
    }

    #[test]
    fn duplicates() {
        let text = "func f {\n  block a:\n    %x = const 1 : i32\n    %x = const 2 : i32\n}\n";
        assert_eq!(kind(text), ParseErrorKind::Duplicate("%x".into()));
    }

    #[test]
    fn exports_resolve() {
        let text = "func f {\n  export %x\n  block a:\n    %x = const 1 : i32\n}\n";
        let f = parse_function(text).unwrap();
        assert_eq!(f.exports, vec![StmtId(0)]);
        let text = "func f {\n  export %nope\n  block a:\n}\n";
        assert_eq!(kind(text), ParseErrorKind::UndefinedValue("nope".into()));
    }

    #[test]
    fn cross_block_uses() {
        let text = "func f {\n  block a:\n    %x = const 1 : i32\n  block b:\n    %y = add %x, %x : i32\n}\n";
        let f = parse_function(text).unwrap();
        assert_eq!(f.stmt(StmtId(1)).operands, vec![StmtId(0), StmtId(0)]);
        assert_eq!(f.stmt(StmtId(1)).block, BlockId(1));
    }
}
