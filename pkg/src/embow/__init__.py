"""embow: sparse bag-of-words decoding over a fixed concept vocabulary.

Maps 512-d vision-aligned embeddings to keyword sets via a trainable
similarity refiner, renders zero-shot captioning prompts for an external
chat-completion model, and scores the generated captions. Raw embeddings
never leave the process; only discrete keywords (plus an object label and
confidence) may cross the privacy boundary.
"""

__version__ = "0.1.0"
