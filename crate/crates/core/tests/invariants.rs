mod common;

#[test]
fn projections_padding_and_softmax_hold_after_every_step() {
    match common::checks::invariants(15) {
        Ok(summary) => println!("{summary}"),
        Err(e) => panic!("{e}"),
    }
}
