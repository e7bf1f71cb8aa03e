pub(crate) mod conv;
pub(crate) mod elementwise;
pub(crate) mod gdn;
pub(crate) mod shuffle;
pub(crate) mod spatial;
