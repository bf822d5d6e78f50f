//! Ordered tree edit distance and TEDR between Content MathML trees.
//!
//!     cargo run --example tree_edit_distance

use mathml_enrich::eval::{tedr, tree_edit_distance, EditCostModel};
use mathml_enrich::mathml::{parse, Markup};

fn main() {
    let reference =
        "<apply><ci>Weierstrass Sigma</ci><apply><plus/><ci>x</ci><cn>1</cn></apply></apply>";
    let candidates = [
        reference,
        "<apply><ci>Divisor Sigma</ci><apply><plus/><ci>x</ci><cn>1</cn></apply></apply>",
        "<apply><ci>Weierstrass Sigma</ci><ci>x</ci></apply>",
        "<apply><ci>mrow</ci><ci>σ</ci><ci>x</ci><ci>+</ci><cn>1</cn></apply>",
        "<ci>σ</ci>",
    ];
    let r = parse(reference, Markup::Content).unwrap();
    let costs = EditCostModel::default();
    println!("reference: {r} ({} nodes)", r.node_count());
    for xml in candidates {
        let g = parse(xml, Markup::Content).unwrap();
        println!(
            "  distance {:>2}  TEDR {:.3}  {g}",
            tree_edit_distance(&g, &r, &costs),
            tedr(&g, &r).unwrap()
        );
    }

    let cheap_relabel = EditCostModel {
        relabel_cost: 0.5,
        ..costs
    };
    let g = parse(candidates[1], Markup::Content).unwrap();
    println!(
        "with relabel cost 0.5: {}",
        tree_edit_distance(&g, &r, &cheap_relabel)
    );
}
