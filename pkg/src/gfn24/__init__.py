"""GFlowNet fine-tuning and decoding-strategy evaluation for the Game of 24 (and 42).

Modules: ``game_env`` (exact arithmetic game and its state DAG), ``oracle``
(exhaustive solver), ``dataset`` (stratified splits), ``policy`` (numpy MLP
forward policy), ``trainer`` (trajectory balance), ``decoding`` (temperature,
top-k, top-p, min-p), ``eval_harness`` (SR/TC metrics, transfer runs) and
``cli``.
"""

__version__ = "0.1.0"
