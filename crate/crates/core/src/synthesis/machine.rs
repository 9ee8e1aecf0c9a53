use super::{PostfixProgram, SynthesisError, Token};
use crate::catalog::Catalog;
use crate::molgraph::{CanonicalForm, Molecule};
use crate::reaction::{apply_detailed, TemplateSet};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Status {
    Success,
    StackUnderflow,
    NoMatch,
    ValenceFail,
    LengthLimit,
}

/// How a reaction step picks among several products.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProductPolicy {
    /// The rank stored on the token; rank 0 when it is out of range.
    #[default]
    Recorded,
    /// Always the canonically smallest product.
    Smallest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum StepKind {
    Push { id: String },
    Apply { r: usize, rank: usize, candidates: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceStep {
    /// 1-based position in the program body.
    pub step: usize,
    pub kind: StepKind,
    pub depth: usize,
    /// Canonical text of the stack top after the step.
    pub top: String,
}

#[derive(Debug, Clone)]
pub struct ExecutionResult {
    pub status: Status,
    pub product: Option<Molecule>,
    pub trace: Vec<TraceStep>,
    /// Body step at which execution stopped, for failures.
    pub failed_step: Option<usize>,
}

/// Incremental stack machine. Reaction operands are taken from the top of
/// the stack in push order, so the last pushed molecule fills the last slot.
pub struct StackMachine<'a> {
    catalog: &'a Catalog,
    templates: &'a TemplateSet,
    stack: Vec<(CanonicalForm, Molecule)>,
    trace: Vec<TraceStep>,
    steps: usize,
}

impl<'a> StackMachine<'a> {
    pub fn new(catalog: &'a Catalog, templates: &'a TemplateSet) -> Self {
        StackMachine {
            catalog,
            templates,
            stack: Vec::new(),
            trace: Vec::new(),
            steps: 0,
        }
    }

    pub fn depth(&self) -> usize {
        self.stack.len()
    }

    pub fn top(&self) -> Option<&Molecule> {
        self.stack.last().map(|(_, m)| m)
    }

    pub fn stack(&self) -> impl Iterator<Item = &Molecule> {
        self.stack.iter().map(|(_, m)| m)
    }

    pub fn trace(&self) -> &[TraceStep] {
        &self.trace
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn push_block(&mut self, id: &str) -> Result<(), SynthesisError> {
        let block = self
            .catalog
            .get(id)
            .ok_or_else(|| SynthesisError::UnknownBlock(id.to_string()))?;
        self.steps += 1;
        self.stack.push((block.canonical.clone(), block.mol.clone()));
        self.trace.push(TraceStep {
            step: self.steps,
            kind: StepKind::Push { id: id.to_string() },
            depth: self.stack.len(),
            top: block.canonical.text.clone(),
        });
        Ok(())
    }

    /// Applies template `r`; `select` maps the number of products to the
    /// chosen rank. Returns the step status and the rank used.
    pub fn apply_with(
        &mut self,
        r: usize,
        select: impl FnOnce(usize) -> usize,
    ) -> Result<(Status, usize), SynthesisError> {
        let tmpl = self.templates.get(r).ok_or(SynthesisError::UnknownTemplate(r))?;
        self.steps += 1;
        let k = tmpl.arity();
        if self.stack.len() < k {
            return Ok((Status::StackUnderflow, 0));
        }
        let base = self.stack.len() - k;
        let operands: Vec<&Molecule> = self.stack[base..].iter().map(|(_, m)| m).collect();
        let outcome = apply_detailed(tmpl, &operands).expect("operand count equals arity");
        if outcome.products.is_empty() {
            let status = if outcome.matches == 0 {
                Status::NoMatch
            } else {
                Status::ValenceFail
            };
            return Ok((status, 0));
        }
        let n = outcome.products.len();
        let rank = select(n).min(n - 1);
        let chosen = outcome.products.into_iter().nth(rank).unwrap();
        self.stack.truncate(base);
        self.trace.push(TraceStep {
            step: self.steps,
            kind: StepKind::Apply { r, rank, candidates: n },
            depth: self.stack.len() + 1,
            top: chosen.0.text.clone(),
        });
        self.stack.push(chosen);
        Ok((Status::Success, rank))
    }

    pub fn apply(&mut self, r: usize, rank: usize) -> Result<Status, SynthesisError> {
        Ok(self.apply_with(r, |n| if rank < n { rank } else { 0 })?.0)
    }

    pub fn into_result(self, status: Status) -> ExecutionResult {
        let failed_step = (status != Status::Success).then_some(self.steps);
        let product = if status == Status::Success {
            self.stack.last().map(|(_, m)| m.clone())
        } else {
            None
        };
        ExecutionResult {
            status,
            product,
            trace: self.trace,
            failed_step,
        }
    }
}

/// Runs a finalized program. Reference errors are `Err`; chemistry and
/// stack failures are reported through the status.
pub fn execute(
    prog: &PostfixProgram,
    catalog: &Catalog,
    templates: &TemplateSet,
    policy: ProductPolicy,
) -> Result<ExecutionResult, SynthesisError> {
    if !prog.is_finalized() {
        return Err(SynthesisError::NotFinalized);
    }
    let mut m = StackMachine::new(catalog, templates);
    for (i, tok) in prog.tokens.iter().enumerate() {
        match tok {
            Token::Start if i == 0 => {}
            Token::Start => return Err(SynthesisError::InvalidProgram(format!("Start at position {i}"))),
            Token::Bb { id, .. } => m.push_block(id)?,
            Token::Rxn { r, rank } => {
                let rank = match policy {
                    ProductPolicy::Recorded => *rank,
                    ProductPolicy::Smallest => 0,
                };
                let status = m.apply(*r, rank)?;
                if status != Status::Success {
                    return Ok(m.into_result(status));
                }
            }
            Token::End => {
                if i + 1 != prog.tokens.len() {
                    return Err(SynthesisError::InvalidProgram(format!("End at position {i}")));
                }
                let status = if m.depth() == 0 {
                    Status::StackUnderflow
                } else {
                    Status::Success
                };
                return Ok(m.into_result(status));
            }
        }
    }
    unreachable!("finalized program ends with End")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::{canonical_form, parse_smiles};
    use crate::reaction::ReactionTemplate;

    fn fixture() -> (Catalog, TemplateSet) {
        let (cat, _) =
            Catalog::parse("acid\tOC(=O)c1ccccc1\namine\tNCCO\nester\tCOC(=O)CN\nketone\tCC(=O)C\n").unwrap();
        let t = TemplateSet::new(vec![
            ReactionTemplate::parse("[C:1](=O)[O;D1].[N;D1:2]>>[C:1](=O)[N:2]").unwrap(),
            ReactionTemplate::parse("[C:1](=O)[O:2][C;D1:3]>>[C:1](=O)O.[O:2][C:3]").unwrap(),
        ]);
        (cat, t)
    }

    fn prog(cat: &Catalog, body: &[&str]) -> PostfixProgram {
        PostfixProgram::finalized(
            body.iter()
                .map(|s| match s.strip_prefix('R') {
                    Some(r) => Token::rxn(r.parse().unwrap()),
                    None => Token::bb(cat, s).unwrap(),
                })
                .collect(),
        )
    }

    fn canon(s: &str) -> String {
        canonical_form(&parse_smiles(s).unwrap()).text
    }

    #[test]
    fn single_block() {
        let (cat, t) = fixture();
        let res = execute(&prog(&cat, &["acid"]), &cat, &t, ProductPolicy::default()).unwrap();
        assert_eq!(res.status, Status::Success);
        assert_eq!(canonical_form(&res.product.unwrap()).text, canon("OC(=O)c1ccccc1"));
    }

    #[test]
    fn coupling() {
        let (cat, t) = fixture();
        let res = execute(
            &prog(&cat, &["acid", "amine", "R0"]),
            &cat,
            &t,
            ProductPolicy::default(),
        )
        .unwrap();
        assert_eq!(res.status, Status::Success);
        assert_eq!(canonical_form(&res.product.unwrap()).text, canon("O=C(NCCO)c1ccccc1"));
        assert_eq!(res.trace.len(), 3);
        assert_eq!(res.trace[2].depth, 1);
    }

    #[test]
    fn underflow_at_step_two() {
        let (cat, t) = fixture();
        let res = execute(&prog(&cat, &["acid", "R0"]), &cat, &t, ProductPolicy::default()).unwrap();
        assert_eq!(res.status, Status::StackUnderflow);
        assert_eq!(res.failed_step, Some(2));
        assert!(res.product.is_none());
    }

    #[test]
    fn operand_order() {
        let (cat, t) = fixture();
        let res = execute(
            &prog(&cat, &["amine", "acid", "R0"]),
            &cat,
            &t,
            ProductPolicy::default(),
        )
        .unwrap();
        assert_eq!(res.status, Status::NoMatch);
    }

    #[test]
    fn product_ranks() {
        let (cat, t) = fixture();
        let p0 = prog(&cat, &["ester", "R1"]);
        let r0 = execute(&p0, &cat, &t, ProductPolicy::default()).unwrap();
        let mut p1 = p0.clone();
        p1.tokens[2] = Token::Rxn { r: 1, rank: 1 };
        let r1 = execute(&p1, &cat, &t, ProductPolicy::default()).unwrap();
        let rs = execute(&p1, &cat, &t, ProductPolicy::Smallest).unwrap();
        let text = |r: &ExecutionResult| canonical_form(r.product.as_ref().unwrap()).text;
        let mut both = vec![canon("NCC(=O)O"), canon("CO")];
        both.sort();
        assert_eq!(text(&r0), both[0]);
        assert_eq!(text(&r1), both[1]);
        assert_eq!(text(&rs), both[0]);
        assert!(matches!(r1.trace[1].kind, StepKind::Apply { candidates: 2, .. }));
    }

    #[test]
    fn leftover_stack_takes_top() {
        let (cat, t) = fixture();
        let res = execute(&prog(&cat, &["acid", "ketone"]), &cat, &t, ProductPolicy::default()).unwrap();
        assert_eq!(res.status, Status::Success);
        assert_eq!(canonical_form(&res.product.unwrap()).text, canon("CC(C)=O"));
    }

    #[test]
    fn errors() {
        let (cat, t) = fixture();
        let mut p = prog(&cat, &["acid"]);
        p.tokens.pop();
        assert_eq!(
            execute(&p, &cat, &t, ProductPolicy::default()).unwrap_err(),
            SynthesisError::NotFinalized
        );
        let p = PostfixProgram::finalized(vec![Token::rxn(7)]);
        assert_eq!(
            execute(&p, &cat, &t, ProductPolicy::default()).unwrap_err(),
            SynthesisError::UnknownTemplate(7)
        );
        let empty = PostfixProgram::finalized(vec![]);
        let res = execute(&empty, &cat, &t, ProductPolicy::default()).unwrap();
        assert_eq!(res.status, Status::StackUnderflow);
    }
}
