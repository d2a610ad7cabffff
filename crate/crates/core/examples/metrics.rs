//! Partition agreement between a reference labelling and a clustering.

use psalm::metrics::{adjusted_rand_index, confusion_matrix, rand_index, Partition};

fn main() -> psalm::Result<()> {
    let truth = Partition::new(vec!["B", "B", "B", "B", "O", "O", "O", "O"])?;
    let found = Partition::new(vec![2, 2, 2, 1, 1, 1, 1, 1])?;
    println!("{}", confusion_matrix(&truth, &found)?);
    println!("Rand {:.4}", rand_index(&truth, &found)?);
    println!("ARI  {:.4}", adjusted_rand_index(&truth, &found)?);

    // Cluster names do not matter, only the grouping.
    let renamed = Partition::new(vec![7, 7, 7, 3, 3, 3, 3, 3])?;
    assert_eq!(adjusted_rand_index(&truth, &found)?, adjusted_rand_index(&truth, &renamed)?);
    Ok(())
}
