//! Compiles a two-step synthesis tree to postfix tokens and traces its
//! execution step by step.

use synspace::synthesis::{compile_tree, execute, parse_program, ProductPolicy, StepKind, SynthesisTree};
use synspace::toydata;

fn main() {
    let catalog = toydata::catalog();
    let templates = toydata::templates();
    // amide coupling, then Suzuki coupling on the aryl bromide
    let tree = SynthesisTree::apply(
        5,
        vec![
            SynthesisTree::apply(0, vec![SynthesisTree::leaf("BB0134"), SynthesisTree::leaf("BB0028")]),
            SynthesisTree::leaf("BB0139"),
        ],
    );
    let prog = compile_tree(&tree, &catalog, &templates).unwrap();
    println!("{}", prog.to_json());
    let res = execute(&prog, &catalog, &templates, ProductPolicy::Recorded).unwrap();
    for s in &res.trace {
        let what = match &s.kind {
            StepKind::Push { id } => format!("push {id}"),
            StepKind::Apply { r, rank, candidates } => format!("apply R{r} (rank {rank} of {candidates})"),
        };
        println!("{:2}  {:28} depth {}  top {}", s.step, what, s.depth, s.top);
    }
    println!("status {:?}", res.status);
    assert_eq!(parse_program(&prog, &templates).unwrap(), tree);

    let broken = synspace::synthesis::PostfixProgram::from_json(
        r#"{"tokens":[{"t":"START"},{"t":"BB","id":"BB0028"},{"t":"RXN","r":0},{"t":"END"}]}"#,
        &catalog,
    )
    .unwrap();
    let res = execute(&broken, &catalog, &templates, ProductPolicy::Recorded).unwrap();
    println!(
        "one block then a two-reactant template: {:?} at step {:?}",
        res.status, res.failed_step
    );
}
