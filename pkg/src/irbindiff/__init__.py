"""Binary function similarity over decompiled LLVM-IR.

The package is organized as a pipeline:

    ircorpus   parse decompiled LLVM-IR text into functions, blocks and CFGs
    normalize  tokenize instructions and collapse volatile lexemes
    sampling   build the MLM/NSP pretraining corpus from instruction graphs
    autodiff   minimal reverse-mode tensor engine used by both models
    lm         BERT-style instruction language model (block embeddings)
    ggnn       gated graph network + momentum-contrast function encoder
    retrieval  cosine search, AUC / recall@k / MRR evaluation
    synth      deterministic synthetic IR corpus generator
    pipeline   stage orchestration (prepare / pretrain / train / embed / eval)
    cli        command line entry point
"""

__version__ = "0.1.0"
