//! Parse Presentation and Content MathML, inspect the preorder arena and
//! serialize it back.
//!
//!     cargo run --example parse_serialize

use mathml_enrich::mathml::{parse, Markup, NodeId};

fn main() {
    let presentation = parse(
        "<math><msub><mi>S</mi><msub><mi>j</mi><mi>i</mi></msub></msub></math>",
        Markup::Presentation,
    )
    .expect("valid presentation markup");
    let content = parse(
        "<apply><selector/><ci>S</ci><apply><selector/><ci>j</ci><ci>i</ci></apply></apply>",
        Markup::Content,
    )
    .expect("valid content markup");

    for tree in [&presentation, &content] {
        println!("{} tree, {} nodes", tree.kind(), tree.node_count());
        for (id, node) in tree.nodes() {
            let depth = std::iter::successors(node.parent(), |p| tree.node(*p).parent()).count();
            println!("  {:>2} {}{}", id.0, "  ".repeat(depth), node.label());
        }
        println!("  serialized: {tree}");
    }

    let inner = presentation.subtree(NodeId(2));
    println!("subtree at node 2: {inner}");

    // Named entities are accepted and become plain characters.
    let entity = parse(
        "<mrow><mi>&sigma;</mi><mo>&ApplyFunction;</mo></mrow>",
        Markup::Presentation,
    )
    .unwrap();
    println!("entities: {entity}");

    match parse("<mrow><mfoo/></mrow>", Markup::Presentation) {
        Ok(_) => unreachable!(),
        Err(e) => println!("rejected: {e}"),
    }
}
