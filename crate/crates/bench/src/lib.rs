//! Fixtures shared by the benchmarks.

use std::collections::BTreeMap;

use ebr_guard::{
    embed_document, generate_synthetic, Embedding, InvertedIndex, SyntheticData, SyntheticSpec,
    VectorIndex, DEFAULT_DIM,
};

pub struct Fixture {
    pub data: SyntheticData,
    pub index: VectorIndex,
    pub text: InvertedIndex,
}

/// Synthetic corpus of `n_docs` documents with ten documents per query.
pub fn fixture(n_docs: usize) -> Fixture {
    let data = generate_synthetic(&SyntheticSpec {
        seed: 1,
        n_docs,
        n_queries: (n_docs / 10).max(1),
        ..SyntheticSpec::default()
    })
    .expect("valid spec");
    let embeddings: BTreeMap<String, Embedding> = data
        .corpus
        .iter()
        .map(|d| (d.doc_id.clone(), embed_document(d, DEFAULT_DIM)))
        .collect();
    let index = VectorIndex::build(&data.corpus, &embeddings).expect("every doc embedded");
    let text = InvertedIndex::build(&data.corpus);
    Fixture { data, index, text }
}
