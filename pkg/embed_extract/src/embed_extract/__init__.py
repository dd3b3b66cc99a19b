"""Produce vocabulary text embeddings and pre-lemmatized caption files in the
exact formats the decoding service ingests (SENSEEMB1 binaries, vocabulary
JSON, corpus JSON-lines). The file formats are the only contract between the
two packages; nothing here imports the service code.
"""

__version__ = "0.1.0"
