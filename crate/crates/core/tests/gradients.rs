mod common;

use common::Record;

fn run(group: fn(&mut Record)) {
    let mut rec = Record::default();
    group(&mut rec);
    assert!(!rec.worst.is_empty());
    let bad = rec.failures();
    assert!(bad.is_empty(), "{bad:#?}");
}

#[test]
fn matrix_products() {
    run(common::matrix_products);
}

#[test]
fn elementwise_binary() {
    run(common::elementwise_binary);
}

#[test]
fn elementwise_unary() {
    run(common::elementwise_unary);
}

#[test]
fn row_operations() {
    run(common::row_operations);
}

#[test]
fn losses() {
    run(common::losses);
}

#[test]
fn linear_and_norm_layers() {
    run(common::linear_and_norm_layers);
}

#[test]
fn lora_layers() {
    run(common::lora_layers);
}
