//! Tiny embedded corpus for smoke runs (`--toy-fixture`).

pub const TRAIN: &str = "\
the cat sat on the mat
the dog sat on the rug
a cat saw a dog
the dog saw the cat
a bird sat on the tree
the cat ate the fish
the dog ate the bone
a bird ate a seed
the cat sat on the rug
the dog sat on the mat
a cat ate a fish
a dog ate a bone
the bird saw the cat
the cat saw the bird
a dog sat on a mat
a cat sat on a rug
the bird sat on the mat
the dog saw a bird
the cat ate a seed
a bird saw the dog
the cat sat on the mat
the dog ate the fish
a cat saw the tree
the bird ate the seed
";

pub const VALID: &str = "\
the cat sat on the tree
a dog saw the bird
the bird ate the fish
a cat sat on the mat
the fox saw the cat
";

pub const TEST: &str = "\
the dog sat on the tree
a bird saw a cat
the cat ate the bone
a dog sat on the rug
the owl ate a seed
";
