"""
The SkeAttnCLR model and its checkpoints

A model holds the query branch (encoder E_q, attention mask, predictor P_q),
its frozen momentum twins (E_k, P_k and optionally a key-side mask) and the
memory bank. Checkpoints are directories holding a named-tensor bundle, the
resolved config.cfg and md5 sums of every tensor file.
"""

import hashlib
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from loguru import logger

from skeattn_utils.attention_mask import complement, compute_mask, get_mhsam, mask_pool, split_salient
from skeattn_utils.autodiff import Tensor, no_grad
from skeattn_utils.config import load_config, write_config
from skeattn_utils.encoder import get_encoder, global_average_pool
from skeattn_utils.errors import FormatError, StructureMismatchError
from skeattn_utils.losses import breakdown, info_nce, local_losses, total_loss
from skeattn_utils.momentum import MemoryBank, momentum_update
from skeattn_utils.predictor import Predictor
from skeattn_utils.tensor_io import MANIFEST, load_bundle, save_bundle

CONFIG_FILE = "config.cfg"
CHECKSUM_FILE = "md5sums.txt"

# component ids mixed into the run seed so each part has its own stream
ENCODER_SEED, MHSAM_SEED, PREDICTOR_SEED, BANK_SEED = range(4)


@dataclass
class KeyOutputs:
    """
    Key-branch embeddings of one batch: z_k and, with the local branch, k_s and k_ns
    """

    z_k: Tensor
    k_s: Tensor = None
    k_ns: Tensor = None


class SkeAttnCLR:
    """
    Dual-branch contrastive model with an attention-mask local branch

    :param cfg: RunConfig
    :param topology: SkeletonTopology, defaults to the one named by cfg
    """

    def __init__(self, cfg, topology=None):
        self.cfg = cfg
        self.topology = topology or cfg.get_topology()
        self.dtype = np.dtype(cfg.train.precision)
        seed = cfg.train.seed

        self.encoder_q = get_encoder(cfg.encoder, self.topology, [seed, ENCODER_SEED], self.dtype)
        self.encoder_k = self.encoder_q.frozen_copy()
        channels = self.encoder_q.out_channels

        self.mhsam = get_mhsam(cfg.mhsam, channels, [seed, MHSAM_SEED], self.dtype)
        self.mhsam_k = self.mhsam.frozen_copy() if cfg.mhsam.key_mask == "momentum" else None

        self.predictor_q = Predictor(
            channels, cfg.train.feature_dim, cfg.train.predictor_layers, [seed, PREDICTOR_SEED], self.dtype
        )
        self.predictor_k = self.predictor_q.frozen_copy()

        self.bank = MemoryBank.random(
            cfg.train.queue_size, cfg.train.feature_dim, [seed, BANK_SEED], self.dtype
        )

    # parameter groups

    def components(self):
        """
        name -> module, query branch first
        """
        components = {
            "encoder_q": self.encoder_q,
            "mhsam": self.mhsam,
            "predictor_q": self.predictor_q,
            "encoder_k": self.encoder_k,
            "predictor_k": self.predictor_k,
        }
        if self.mhsam_k is not None:
            components["mhsam_k"] = self.mhsam_k
        return components

    def momentum_pairs(self):
        pairs = [(self.encoder_k, self.encoder_q), (self.predictor_k, self.predictor_q)]
        if self.mhsam_k is not None:
            pairs.append((self.mhsam_k, self.mhsam))
        return pairs

    def named_parameters(self):
        params = {}
        for name, module in self.components().items():
            params.update(module.named_parameters(prefix=f"{name}."))
        return params

    def trainable_parameters(self):
        """
        Query-branch parameters the optimizer updates; the mask is left out when the local branch is off
        """
        modules = [("encoder_q", self.encoder_q), ("predictor_q", self.predictor_q)]
        if not self.cfg.train.disable_local:
            modules.append(("mhsam", self.mhsam))
        params = {}
        for name, module in modules:
            params.update(module.named_parameters(prefix=f"{name}."))
        return params

    def key_parameters(self):
        return {
            name: p
            for name, p in self.named_parameters().items()
            if name.split(".", 1)[0] in ("encoder_k", "predictor_k", "mhsam_k")
        }

    def momentum_step(self, m):
        for key, query in self.momentum_pairs():
            momentum_update(key, query, m)

    # forward

    def key_outputs(self, x_k, x_mix=None):
        """
        Key-branch embeddings of the current parameters, recorded without a graph

        Passing them to losses holds the key branch fixed while the query
        parameters move, which is what the stop-gradient makes the analytic
        gradient see.

        :return: KeyOutputs
        """
        with no_grad():
            f_k = self.encoder_k(x_k)
            z_k = self.predictor_k.embed(global_average_pool(f_k))
            if self.cfg.train.disable_local:
                return KeyOutputs(z_k)
            _, _, f_ks, f_kns = split_salient(self.encoder_q(x_mix), f_k, self.mhsam, self.mhsam_k)
            return KeyOutputs(z_k, self.predictor_k.embed(f_ks), self.predictor_k.embed(f_kns))

    def losses(self, x_q, x_k, x_mix=None, keys=None):
        """
        Total loss of one step

        :param x_q: (B, C, T, V, M) query views
        :param x_k: (B, C, T, V, M) key views
        :param x_mix: part-mixed query views, required unless the local branch is disabled
        :param keys: KeyOutputs from key_outputs to use instead of running the key branch
        :return: (total loss Tensor, z_k array to enqueue, LossBreakdown)
        """
        train = self.cfg.train
        temperature = self.cfg.loss.temperature
        bank = self.bank.snapshot()

        f_q = self.encoder_q(x_q)
        z_q = self.predictor_q.embed(global_average_pool(f_q))
        if keys is None:
            with no_grad():
                f_k = self.encoder_k(x_k)
                z_k = self.predictor_k.embed(global_average_pool(f_k))
        else:
            z_k = keys.z_k
        l_info = info_nce(z_q, z_k, bank, temperature)

        if train.disable_local:
            l_s = l_ns = l_local = 0.0
        else:
            f_mix = self.encoder_q(x_mix)
            if keys is None:
                f_s, f_ns, f_ks, f_kns = split_salient(f_mix, f_k, self.mhsam, self.mhsam_k)
                with no_grad():
                    k_s = self.predictor_k.embed(f_ks)
                    k_ns = self.predictor_k.embed(f_kns)
            else:
                m = compute_mask(f_mix, self.mhsam)
                f_s, f_ns = mask_pool(f_mix, m), mask_pool(f_mix, complement(m))
                k_s, k_ns = keys.k_s, keys.k_ns
            q_s = self.predictor_q.embed(f_s)
            q_ns = self.predictor_q.embed(f_ns)
            l_s, l_ns, l_local = local_losses(
                q_s,
                k_s,
                q_ns,
                k_ns,
                bank,
                self.cfg.loss,
                negative_pair=not train.disable_negative_pair,
                use_ns=not train.disable_ns,
            )

        total = total_loss(l_info, l_local)
        return total, np.array(z_k.data), breakdown(l_info, l_s, l_ns, l_local, total)

    def features(self, coords):
        """
        Pooled query-encoder features (B, C_f) without recording a graph
        """
        with no_grad():
            return np.array(global_average_pool(self.encoder_q(coords)).data)

    def masks(self, coords):
        """
        Soft masks (B, n, C_f) of the query mask module
        """
        with no_grad():
            return np.array(compute_mask(self.encoder_q(coords), self.mhsam).data)

    # persistence

    def state_dict(self):
        state = {}
        for name, module in self.components().items():
            state.update(module.state_dict(prefix=f"{name}."))
        for key, value in self.bank.state().items():
            state[f"bank.{key}"] = value
        return state

    def load_state_dict(self, state):
        for name, module in self.components().items():
            module.load_state_dict(
                {k: v for k, v in state.items() if k.startswith(f"{name}.")}, prefix=f"{name}."
            )
        if "bank.buffer" not in state:
            raise StructureMismatchError("checkpoint has no memory bank")
        self.bank.load_state({"buffer": state["bank.buffer"], "meta": state["bank.meta"]})


def calc_md5_sum(path, buffer_size=1024 * 1024):
    """
    md5 hex digest of a file
    """
    md5 = hashlib.md5()
    with open(path, "rb") as fh:
        data = fh.read(buffer_size)
        while data:
            md5.update(data)
            data = fh.read(buffer_size)
    return md5.hexdigest()


def save_checkpoint(model, directory):
    """
    Write parameters, bank, resolved config and checksums to a checkpoint directory
    """
    directory = Path(directory)
    save_bundle(directory, model.state_dict())
    write_config(model.cfg, directory / CONFIG_FILE)
    files = sorted(f for f in os.listdir(directory) if f.endswith(".skt"))
    with open(directory / CHECKSUM_FILE, "w") as handle:
        for file_name in files:
            handle.write(f"{calc_md5_sum(directory / file_name)}  {file_name}\n")
    logger.info(f"checkpoint written to {directory}")


def check_checkpoint(directory):
    """
    Confirm a checkpoint directory is complete and its tensor files are intact

    :raises FormatError: missing files or a checksum mismatch
    """
    directory = Path(directory)
    for required in (MANIFEST, CONFIG_FILE, CHECKSUM_FILE):
        if not os.path.isfile(directory / required):
            raise FormatError(f"checkpoint {directory} is missing {required}")
    with open(directory / CHECKSUM_FILE, "r") as handle:
        for line in handle:
            if not line.strip():
                continue
            required_md5, file_name = line.split()
            if calc_md5_sum(directory / file_name) != required_md5:
                raise FormatError(f"checksum mismatch for {file_name} in checkpoint {directory}")


def load_checkpoint(directory):
    """
    Rebuild a model from a checkpoint directory

    :return: SkeAttnCLR
    """
    check_checkpoint(directory)
    cfg = load_config(Path(directory) / CONFIG_FILE)
    model = SkeAttnCLR(cfg)
    model.load_state_dict(load_bundle(directory))
    logger.info(f"checkpoint loaded from {directory}")
    return model
