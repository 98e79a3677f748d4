//! WordPiece vocabulary training and offset-tracking encode/decode.

mod encode;
mod pretokenize;
mod train;
mod vocab;

pub use encode::{decode, encode, encode_pieces, CharSpan, Piece, TokenizedSequence};
pub use pretokenize::{pre_split, Word};
pub use train::{train_wordpiece, train_wordpiece_traced, Merge, DEFAULT_MIN_FREQUENCY};
pub use vocab::{MarkerIds, Vocab, CONTINUATION_PREFIX, MARKER_TOKENS, SPECIAL_TOKENS};
