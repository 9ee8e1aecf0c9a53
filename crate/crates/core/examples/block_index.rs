//! Builds the block index, runs nearest-neighbour queries, splits the
//! catalog with k-means and applies the similarity filter.

use synspace::bbindex::{kmeans_split, max_train_similarity_filter, BlockIndex};
use synspace::toydata;

fn main() {
    let catalog = toydata::catalog();
    let index = BlockIndex::build(&catalog);
    println!("{} blocks indexed", index.len());

    let query = index.fingerprint(index.row_of("BB0139").unwrap()).to_f64();
    for n in index.nearest(&query, 5).unwrap() {
        println!(
            "  {}  d2 {:5.1}  {}",
            n.id,
            n.distance,
            catalog.get(&n.id).unwrap().canonical
        );
    }

    let bytes = index.to_bytes();
    let again = BlockIndex::from_bytes(&bytes, &catalog).unwrap();
    println!("serialized {} bytes, reload equal: {}", bytes.len(), again == index);

    for cluster in 0..8 {
        let split = kmeans_split(&index, 8, 8, cluster).unwrap();
        let kept = |t| {
            max_train_similarity_filter(&catalog, &split.test_ids, &split.train_ids, t)
                .unwrap()
                .len()
        };
        println!(
            "cluster {cluster}: {:3} test blocks, {:3} at most 0.6 similar to train, {:3} at most 0.4",
            split.test_ids.len(),
            kept(0.6),
            kept(0.4)
        );
    }
}
