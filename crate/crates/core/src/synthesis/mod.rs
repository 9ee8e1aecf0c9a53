//! Postfix synthesis programs, the stack machine that runs them, and the
//! conversion to and from synthesis trees.

mod machine;

pub use machine::{execute, ExecutionResult, ProductPolicy, StackMachine, Status, StepKind, TraceStep};

use crate::catalog::Catalog;
use crate::fingerprint::FingerprintBits;
use crate::reaction::TemplateSet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SynthesisError {
    #[error("unknown block id '{0}'")]
    UnknownBlock(String),
    #[error("unknown template index {0}")]
    UnknownTemplate(usize),
    #[error("template {r} takes {expected} operands, node has {got}")]
    ArityMismatch { r: usize, expected: usize, got: usize },
    #[error("invalid program: {0}")]
    InvalidProgram(String),
    #[error("program has no End token")]
    NotFinalized,
    #[error("program json: {0}")]
    Json(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Token {
    Start,
    Bb {
        id: String,
        fp: FingerprintBits,
    },
    /// `rank` selects among several products, 0 being the canonically smallest.
    Rxn {
        r: usize,
        rank: usize,
    },
    End,
}

/// Token classes predicted by the type head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Bb = 0,
    Rxn = 1,
    End = 2,
}

impl TokenKind {
    pub const COUNT: usize = 3;

    pub fn from_index(i: usize) -> TokenKind {
        match i {
            0 => TokenKind::Bb,
            1 => TokenKind::Rxn,
            _ => TokenKind::End,
        }
    }
}

impl Token {
    pub fn bb(catalog: &Catalog, id: &str) -> Result<Token, SynthesisError> {
        let block = catalog
            .get(id)
            .ok_or_else(|| SynthesisError::UnknownBlock(id.to_string()))?;
        Ok(Token::Bb {
            id: block.id.clone(),
            fp: block.fp.clone(),
        })
    }

    pub fn rxn(r: usize) -> Token {
        Token::Rxn { r, rank: 0 }
    }

    pub fn kind(&self) -> Option<TokenKind> {
        match self {
            Token::Start => None,
            Token::Bb { .. } => Some(TokenKind::Bb),
            Token::Rxn { .. } => Some(TokenKind::Rxn),
            Token::End => Some(TokenKind::End),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PostfixProgram {
    pub tokens: Vec<Token>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "t")]
enum TokenJson {
    #[serde(rename = "START")]
    Start,
    #[serde(rename = "BB")]
    Bb { id: String },
    #[serde(rename = "RXN")]
    Rxn {
        r: usize,
        #[serde(default, skip_serializing_if = "is_zero")]
        rank: usize,
    },
    #[serde(rename = "END")]
    End,
}

fn is_zero(x: &usize) -> bool {
    *x == 0
}

#[derive(Serialize, Deserialize)]
struct ProgramJson {
    tokens: Vec<TokenJson>,
}

impl PostfixProgram {
    /// `Start`, the body, `End`.
    pub fn finalized(body: Vec<Token>) -> Self {
        let mut tokens = Vec::with_capacity(body.len() + 2);
        tokens.push(Token::Start);
        tokens.extend(body);
        tokens.push(Token::End);
        PostfixProgram { tokens }
    }

    pub fn is_finalized(&self) -> bool {
        matches!(self.tokens.last(), Some(Token::End))
    }

    /// Tokens other than `Start` and `End`.
    pub fn body(&self) -> &[Token] {
        let start = usize::from(matches!(self.tokens.first(), Some(Token::Start)));
        let end = self.tokens.len() - usize::from(self.is_finalized());
        &self.tokens[start..end.max(start)]
    }

    pub fn reaction_count(&self) -> usize {
        self.tokens.iter().filter(|t| matches!(t, Token::Rxn { .. })).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain data")
    }

    /// Reads `{"tokens": [...]}`; fingerprints come from the catalog.
    pub fn from_json_value(v: &serde_json::Value, catalog: &Catalog) -> Result<Self, SynthesisError> {
        let pj: ProgramJson = serde_json::from_value(v.clone()).map_err(|e| SynthesisError::Json(e.to_string()))?;
        let tokens = pj
            .tokens
            .into_iter()
            .map(|t| match t {
                TokenJson::Start => Ok(Token::Start),
                TokenJson::Bb { id } => Token::bb(catalog, &id),
                TokenJson::Rxn { r, rank } => Ok(Token::Rxn { r, rank }),
                TokenJson::End => Ok(Token::End),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PostfixProgram { tokens })
    }

    pub fn from_json(text: &str, catalog: &Catalog) -> Result<Self, SynthesisError> {
        let v: serde_json::Value = serde_json::from_str(text).map_err(|e| SynthesisError::Json(e.to_string()))?;
        Self::from_json_value(&v, catalog)
    }
}

impl Serialize for PostfixProgram {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        let tokens = self
            .tokens
            .iter()
            .map(|t| match t {
                Token::Start => TokenJson::Start,
                Token::Bb { id, .. } => TokenJson::Bb { id: id.clone() },
                Token::Rxn { r, rank } => TokenJson::Rxn { r: *r, rank: *rank },
                Token::End => TokenJson::End,
            })
            .collect();
        ProgramJson { tokens }.serialize(ser)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SynthesisTree {
    Leaf(String),
    Apply {
        r: usize,
        children: Vec<SynthesisTree>,
        rank: usize,
    },
}

impl SynthesisTree {
    pub fn apply(r: usize, children: Vec<SynthesisTree>) -> Self {
        SynthesisTree::Apply { r, children, rank: 0 }
    }

    pub fn leaf(id: &str) -> Self {
        SynthesisTree::Leaf(id.to_string())
    }
}

/// Post-order emission wrapped in `Start`/`End`.
pub fn compile_tree(
    tree: &SynthesisTree,
    catalog: &Catalog,
    templates: &TemplateSet,
) -> Result<PostfixProgram, SynthesisError> {
    fn emit(
        t: &SynthesisTree,
        catalog: &Catalog,
        templates: &TemplateSet,
        out: &mut Vec<Token>,
    ) -> Result<(), SynthesisError> {
        match t {
            SynthesisTree::Leaf(id) => out.push(Token::bb(catalog, id)?),
            SynthesisTree::Apply { r, children, rank } => {
                let tmpl = templates.get(*r).ok_or(SynthesisError::UnknownTemplate(*r))?;
                if tmpl.arity() != children.len() {
                    return Err(SynthesisError::ArityMismatch {
                        r: *r,
                        expected: tmpl.arity(),
                        got: children.len(),
                    });
                }
                for c in children {
                    emit(c, catalog, templates, out)?;
                }
                out.push(Token::Rxn { r: *r, rank: *rank });
            }
        }
        Ok(())
    }
    let mut body = Vec::new();
    emit(tree, catalog, templates, &mut body)?;
    Ok(PostfixProgram::finalized(body))
}

/// Rebuilds the tree by simulating the stack over the program body.
pub fn parse_program(prog: &PostfixProgram, templates: &TemplateSet) -> Result<SynthesisTree, SynthesisError> {
    let invalid = |m: String| SynthesisError::InvalidProgram(m);
    let mut stack: Vec<SynthesisTree> = Vec::new();
    for (i, tok) in prog.body().iter().enumerate() {
        match tok {
            Token::Bb { id, .. } => stack.push(SynthesisTree::Leaf(id.clone())),
            Token::Rxn { r, rank } => {
                let tmpl = templates.get(*r).ok_or(SynthesisError::UnknownTemplate(*r))?;
                let k = tmpl.arity();
                if stack.len() < k {
                    return Err(invalid(format!(
                        "stack underflow at step {}: template {r} needs {k}, depth {}",
                        i + 1,
                        stack.len()
                    )));
                }
                let children = stack.split_off(stack.len() - k);
                stack.push(SynthesisTree::Apply {
                    r: *r,
                    children,
                    rank: *rank,
                });
            }
            Token::Start | Token::End => return Err(invalid(format!("misplaced Start/End at step {}", i + 1))),
        }
    }
    if stack.len() != 1 {
        return Err(invalid(format!("final stack depth {} (expected 1)", stack.len())));
    }
    Ok(stack.pop().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reaction::ReactionTemplate;

    fn fixture() -> (Catalog, TemplateSet) {
        let (cat, _) = Catalog::parse("B1\tOC(=O)CC(=O)OC\nB2\tNCc1ccccc1\nB3\tNC1CC1\nB4\tC=O\n").unwrap();
        let templates = TemplateSet::new(vec![
            ReactionTemplate::parse("[C:1](=O)[O;D1].[N;D1:2]>>[C:1](=O)[N:2]").unwrap(),
            ReactionTemplate::parse("[C:1](=O)O[C;D1].[N;D1:2]>>[C:1](=O)[N:2]").unwrap(),
            ReactionTemplate::parse("[C:1]>>[C:1]").unwrap(),
            ReactionTemplate::parse("[C:1].[C:2].[C:3]>>[C:1][C:2][C:3]").unwrap(),
        ]);
        (cat, templates)
    }

    #[test]
    fn figure_two_postfix() {
        let (cat, t) = fixture();
        let tree = SynthesisTree::apply(
            1,
            vec![
                SynthesisTree::apply(0, vec![SynthesisTree::leaf("B1"), SynthesisTree::leaf("B2")]),
                SynthesisTree::leaf("B3"),
            ],
        );
        let prog = compile_tree(&tree, &cat, &t).unwrap();
        let ids: Vec<String> = prog
            .body()
            .iter()
            .map(|tok| match tok {
                Token::Bb { id, .. } => id.clone(),
                Token::Rxn { r, .. } => format!("R{r}"),
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(ids, ["B1", "B2", "R0", "B3", "R1"]);
        assert_eq!(parse_program(&prog, &t).unwrap(), tree);
    }

    #[test]
    fn leaf_and_ternary() {
        let (cat, t) = fixture();
        let p = compile_tree(&SynthesisTree::leaf("B1"), &cat, &t).unwrap();
        assert_eq!(p.body().len(), 1);
        let tri = SynthesisTree::apply(
            3,
            vec![
                SynthesisTree::leaf("B1"),
                SynthesisTree::leaf("B2"),
                SynthesisTree::leaf("B3"),
            ],
        );
        let p = compile_tree(&tri, &cat, &t).unwrap();
        assert!(matches!(p.body()[3], Token::Rxn { r: 3, .. }));
        assert_eq!(p.body().len(), 4);
    }

    #[test]
    fn reference_errors() {
        let (cat, t) = fixture();
        assert_eq!(
            compile_tree(&SynthesisTree::leaf("nope"), &cat, &t),
            Err(SynthesisError::UnknownBlock("nope".into()))
        );
        let bad = SynthesisTree::apply(9, vec![SynthesisTree::leaf("B1")]);
        assert_eq!(compile_tree(&bad, &cat, &t), Err(SynthesisError::UnknownTemplate(9)));
        let wrong = SynthesisTree::apply(0, vec![SynthesisTree::leaf("B1")]);
        assert!(matches!(
            compile_tree(&wrong, &cat, &t),
            Err(SynthesisError::ArityMismatch { .. })
        ));
    }

    #[test]
    fn underflow_is_invalid() {
        let (_, t) = fixture();
        let p = PostfixProgram::finalized(vec![Token::rxn(0)]);
        assert!(matches!(parse_program(&p, &t), Err(SynthesisError::InvalidProgram(_))));
    }

    #[test]
    fn json_round_trip() {
        let (cat, _) = fixture();
        let p = PostfixProgram::finalized(vec![
            Token::bb(&cat, "B1").unwrap(),
            Token::bb(&cat, "B2").unwrap(),
            Token::Rxn { r: 0, rank: 2 },
        ]);
        let text = p.to_json();
        assert!(text.contains(r#"{"t":"BB","id":"B1"}"#));
        assert!(text.contains(r#"{"t":"RXN","r":0,"rank":2}"#));
        assert_eq!(PostfixProgram::from_json(&text, &cat).unwrap(), p);
        let short = r#"{"tokens":[{"t":"BB","id":"B4"},{"t":"RXN","r":2}]}"#;
        let q = PostfixProgram::from_json(short, &cat).unwrap();
        assert!(!q.is_finalized());
        assert_eq!(q.body().len(), 2);
        assert!(PostfixProgram::from_json(r#"{"tokens":[{"t":"BB","id":"X"}]}"#, &cat).is_err());
    }
}
