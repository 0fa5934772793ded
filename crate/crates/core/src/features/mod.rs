//! Text → model input: baseline term tokenization, TF-IDF vectors, subword
//! sequences for transformer encoders and pretrained word embeddings.

mod embeddings;
mod subword;
mod tfidf;
mod tokenize;

pub use embeddings::{load_word_embeddings, write_word2vec, EmbeddingTable};
pub use subword::{
    encode_subwords, SpecialTokens, SubwordTokenizer, TokenSequence, WordPiece,
    DEFAULT_MAX_LEN, MAX_SEQUENCE_LENGTH,
};
pub use tfidf::{fit_tfidf, transform_tfidf, SparseVector, TfidfModel};
pub use tokenize::{is_term_char, terms_with_ngrams, tokenize_basic};
