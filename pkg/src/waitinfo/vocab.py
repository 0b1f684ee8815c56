"""Reserved token ids shared by corpora and models."""

PAD = 0
BOS = 1
EOS = 2
FIRST_FREE = 3
