"""Adversarial training with a pruner in the back-propagation stage.

One call to `run_experiment` trains one model, evaluates it on the validation
split after every epoch, re-evaluates the best epoch on the test split and
writes results.csv, best.ckpt, histogram.svg and config.txt.
"""

import logging
import time

from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from .attacks import attack, check_attack_range
from .checkpoint import Checkpoint
from .config import CONFIG, ExperimentConfig, config_dump, config_hash, config_parse
from .data_io import Dataset, build_dataset, split_train_val
from .errors import SRTException, ParameterError, ValidationError, FormatError, ContractError
from .figures import emit_histogram_svg
from .metrics import accuracy, robust_accuracies, sparsity, channel_sparsity
from .models import Model, build_model, loss_and_gradients
from .pruners import PrunerState, init_state, step, finalize_epoch, descent_violations, lipschitz_estimate
from .results_session import ResultsSession
from .srt_types import AttackSpec, MetricsRecord, ReportRow
from .utils import derive_rng, derive_seed, minibatches, flatten_params, unflatten_params

logger = logging.getLogger(__name__)

# stream tags for derive_rng; every random draw of a run comes from one of these
INIT, SPLIT, SHUFFLE, ATTACK, NOISE, EVAL, PROBE = range(7)

HISTOGRAM_BINS = 100

METRIC_COLUMNS = ["a1", "a2", "a3", "sparsity", "channel_sparsity", "lagrangian"]

def learning_rate(epoch: int, lr0: float, decay_epochs: Sequence[int], factor: float) -> float:
    return lr0 * factor ** sum(1 for e in decay_epochs if e <= epoch)

def output_dir(config: ExperimentConfig) -> Path:
    path = Path(config.output)
    return path if path.is_absolute() else CONFIG.SRT.OUTPUT_ROOT / path

def split_dataset(config: ExperimentConfig) -> tuple[Dataset, Dataset, Dataset]:
    """(train, val, test); the same config always yields the same three splits."""
    full = build_dataset(config.data, config.seed)
    rest, test = split_train_val(full, config.data.test_fraction, derive_seed(config.seed, SPLIT, 0))
    train, val = split_train_val(rest, config.data.val_fraction, derive_seed(config.seed, SPLIT, 1))
    if config.optimizer.batch_size > len(train):
        raise ValidationError(f"optimizer.batch_size {config.optimizer.batch_size} exceeds the {len(train)} training examples")
    return train, val, test

def check_attack_ranges(specs: Sequence[AttackSpec], dataset: Dataset) -> None:
    for spec in specs:
        try:
            check_attack_range(spec, dataset.lo, dataset.hi)
        except ParameterError as err:
            raise ValidationError(f"{dataset.provenance}: {err}") from err

def _check_step_size(model: Model, state: PrunerState, x: np.ndarray, y: np.ndarray, config: ExperimentConfig) -> Optional[float]:
    keys = list(state.w)
    probe = model.copy()

    def oracle(vector: np.ndarray) -> np.ndarray:
        probe.load_parameters(unflatten_params(vector, state.w, keys))
        _, grads = loss_and_gradients(probe, x, y, "train", derive_rng(config.seed, PROBE, 0))
        return flatten_params(grads, keys)

    monitor = config.monitor
    l_hat = lipschitz_estimate(oracle, flatten_params(state.w, keys), monitor.lipschitz_probes, monitor.lipschitz_radius, derive_rng(config.seed, PROBE, 1))
    bound = 2.0 / (state.beta + l_hat)
    if state.eta >= bound:
        logger.warning("step size %.4g violates the descent bound 2/(beta+L_hat) = %.4g (L_hat=%.4g)", state.eta, bound, l_hat)
    else:
        logger.info("step size %.4g within the descent bound %.4g (L_hat=%.4g)", state.eta, bound, l_hat)
    return l_hat

def _evaluate(model: Model, dataset: Dataset, config: ExperimentConfig, epoch: int, workers: int) -> tuple[float, float, float]:
    return robust_accuracies(model, dataset, config.eval_attacks, derive_seed(config.seed, EVAL), epoch, workers)

def _channel_sparsity(model: Model) -> float:
    return channel_sparsity(model) if model.groups() else 0.0

def _train(config: ExperimentConfig, session: ResultsSession, workers: int) -> list[ReportRow]:
    seed, opt = config.seed, config.optimizer
    train, val, test = split_dataset(config)
    logger.info("data: %d train, %d val, %d test (%s)", len(train), len(val), len(test), train.provenance)
    check_attack_ranges([config.train_attack, *config.eval_attacks], train)

    model = build_model(config.model, train.input_shape, train.num_classes, derive_seed(seed, INIT))
    logger.info("model: %r", model)

    spec = config.pruner
    state = init_state(
        spec.algorithm,  # type: ignore[arg-type]
        {pid: model.values()[pid] for pid in model.prunable_ids()},
        spec.beta, spec.lam, spec.lam1, spec.lam2, opt.lr, spec.prox, model.group_map(),
    )

    tag = config_hash(config)
    rows: list[ReportRow] = []
    best: Optional[tuple[float, int, Model, PrunerState]] = None
    velocity: Optional[dict[str, np.ndarray]] = None

    epochs = tqdm(range(opt.epochs), desc="epochs", unit="epoch", disable=logger.getEffectiveLevel() > logging.INFO)
    for epoch in epochs:
        started = time.perf_counter()
        state = replace(state, eta=learning_rate(epoch, opt.lr, opt.decay_epochs, opt.decay_factor))
        first = len(state.history)

        for batch, index in enumerate(minibatches(len(train), opt.batch_size, derive_rng(seed, SHUFFLE, epoch))):
            model.load_parameters(state.w)
            x, y = train.inputs.data[index], train.labels[index]

            if epoch == 0 and batch == 0 and config.monitor.lipschitz_probes > 0:
                _check_step_size(model, state, x, y, config)

            # the attack and the loss see the same ensemble noise draw
            attack_rng = derive_rng(seed, ATTACK, epoch) if config.redraw == "epoch" else derive_rng(seed, ATTACK, epoch, batch)
            noise_seed = derive_seed(seed, NOISE, epoch, batch)
            adversarial = attack(model, x, y, config.train_attack, attack_rng, "train", noise_seed)
            f_val, grads = loss_and_gradients(model, adversarial.data, y, "train", np.random.default_rng(noise_seed))
            grads = {pid: grads[pid] for pid in state.w}

            if opt.momentum > 0:
                if velocity is None:
                    velocity = grads
                else:
                    velocity = {pid: opt.momentum * velocity[pid] + grads[pid] for pid in grads}
                grads = velocity

            state = step(state, grads, f_val)
            logger.debug("epoch %d batch %d: loss %.6g", epoch, batch, f_val)

        violations = descent_violations(state.history[first:], config.monitor.slack)
        if violations:
            logger.warning("epoch %d: Lagrangian rose above the slack at %d of %d steps", epoch, len(violations), len(state.history) - first)

        finalized = finalize_epoch(state, model)
        a1, a2, a3 = _evaluate(finalized, val, config, epoch, workers)
        record = MetricsRecord(
            epoch, a1, a2, a3, sparsity(finalized), _channel_sparsity(finalized),
            state.history[-1] if state.history else float("nan"),
            time.perf_counter() - started if config.timing else 0.0,
        )
        rows.append(ReportRow(tag, spec.algorithm, "val", record))
        logger.info("epoch %d: lr %.4g A1 %.2f A2 %.2f A3 %.2f sparsity %.2f%% channels %.2f%%", epoch, state.eta, a1, a2, a3, record.sparsity, record.channel_sparsity)

        score = a1 if config.selection == "clean" else a3
        if best is None or score > best[0]:
            best = (score, epoch, finalized, state)

    assert best is not None
    _, best_epoch, best_model, best_state = best
    rows[best_epoch].best_val = True

    a1, a2, a3 = _evaluate(best_model, test, config, best_epoch, workers)
    val_record = rows[best_epoch].record
    test_record = MetricsRecord(best_epoch, a1, a2, a3, val_record.sparsity, val_record.channel_sparsity, val_record.lagrangian, 0.0)
    rows.append(ReportRow(tag, spec.algorithm, "test", test_record, best_val=True))
    logger.info("best epoch %d on test: A1 %.2f A2 %.2f A3 %.2f sparsity %.2f%%", best_epoch, a1, a2, a3, test_record.sparsity)

    for result in (
        session.appendRows(rows),
        session.saveCheckpoint("best.ckpt", best_model, best_state, config_dump(config)),
        session.saveText("config.txt", config_dump(config)),
    ):
        if not result[0]:
            raise OSError(result[1])

    emit_histogram_svg(best_model, session.directory / "histogram.svg", HISTOGRAM_BINS)
    return rows

def run_experiment(config: ExperimentConfig, output: Optional[Union[str, Path]] = None, workers: int = 1) -> list[ReportRow]:
    if workers < 1:
        raise ParameterError(f"workers must be >= 1, got {workers}")

    directory = Path(output) if output is not None else output_dir(config)
    session = ResultsSession()
    result = session.init(directory)
    if not result[0]:
        raise OSError(result[1])

    try:
        return _train(config, session, workers)
    except SRTException as err:
        if CONFIG.SRT.CONFIG_FILE is None:
            raise
        raise type(err)(f"{CONFIG.SRT.CONFIG_FILE}: {err}") from err
    finally:
        session.close()

def _best_row(frame: pd.DataFrame, path: str) -> pd.Series:
    test = frame[frame["split"] == "test"]
    if len(test):
        return test.iloc[0]
    best = frame[frame["best_val"] == 1]
    if len(best):
        return best.iloc[0]
    raise FormatError(f"{path}: no best-epoch row")

def compare_runs(paths: Sequence[Union[str, Path]], out: Optional[Union[str, Path]] = None) -> tuple[str, pd.DataFrame]:
    """Best-epoch rows of several runs side by side, with deltas against the first run."""
    if len(paths) < 2:
        raise ParameterError(f"compare_runs needs at least two result files, got {len(paths)}")

    session = ResultsSession()
    picked: list[pd.Series] = []
    for path in paths:
        success, frame = session.readRows(path)
        if not success:
            raise FormatError(frame)
        picked.append(_best_row(frame, str(path)))

    table = pd.DataFrame(picked).reset_index(drop=True)
    table.insert(0, "run", [Path(p).parent.name or str(p) for p in paths])
    table = table[["run", "config_hash", "pruner", "epoch", *METRIC_COLUMNS]]

    for column in METRIC_COLUMNS:
        table[f"delta_{column}"] = table[column].astype(float) - float(table[column].iloc[0])

    if out is not None:
        table.to_csv(out, index=False, lineterminator="\n", float_format="%.6g")

    text = table.to_string(index=False, float_format=lambda v: f"{v:.4g}")
    return text, table

def evaluate_checkpoint(checkpoint: Checkpoint, spec: AttackSpec, workers: int = 1) -> float:
    """Test accuracy of a stored model, on the test split rebuilt from its embedded config."""
    if not checkpoint.config_text.strip():
        raise ContractError("checkpoint carries no experiment config to rebuild the test split from")

    config = config_parse(checkpoint.config_text)
    _, _, test = split_dataset(config)
    check_attack_ranges([spec], test)
    return accuracy(checkpoint.model, test, spec, derive_seed(config.seed, EVAL), 0, workers)
