"""
Optimizers and learning-rate schedules for the autodiff parameters
"""

import numpy as np
from loguru import logger


class SGD:
    """
    Stochastic gradient descent with momentum and L2 weight decay

    v <- momentum * v + (g + weight_decay * p); p <- p - lr * v
    (p <- p - lr * (g' + momentum * v) with nesterov)

    :param params: mapping of name -> trainable Parameter
    :param learning_rate: initial learning rate
    :param momentum: velocity decay
    :param weight_decay: L2 penalty coefficient
    :param nesterov: use Nesterov momentum
    :param clip_norm: rescale gradients whose global norm exceeds this value, 0 disables
    """

    def __init__(self, params, learning_rate, momentum=0.9, weight_decay=0.0, nesterov=False, clip_norm=0.0):
        self.params = dict(params)
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.nesterov = nesterov
        self.clip_norm = clip_norm
        self.velocity = {name: np.zeros(p.shape, dtype=p.dtype) for name, p in self.params.items()}

    def clip(self, grads):
        norm = np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
        if self.clip_norm > 0 and norm > self.clip_norm:
            scale = self.clip_norm / norm
            logger.debug(f"gradient norm {norm:.3f} clipped to {self.clip_norm}")
            return {name: g * scale for name, g in grads.items()}
        return grads

    def step(self, grads, learning_rate=None):
        """
        Apply one update from a mapping of name -> gradient array
        """
        learning_rate = self.learning_rate if learning_rate is None else learning_rate
        grads = self.clip(grads)
        for name, parameter in self.params.items():
            grad = grads[name] + self.weight_decay * parameter.data
            velocity = self.momentum * self.velocity[name] + grad
            self.velocity[name] = velocity
            update = grad + self.momentum * velocity if self.nesterov else velocity
            parameter.assign(parameter.data - learning_rate * update)


def get_optimizer(optimizer_function, params, learning_rate, **kwargs):
    """
    Get the optimization function for a set of parameters

    :param optimizer_function: optimization function. One of ['sgd', 'plain_sgd']
    :param params: mapping of name -> trainable Parameter
    :param learning_rate: initial learning rate for the optimization function
    :return: optimizer
    """

    if optimizer_function == "sgd":
        optimizer = SGD(params, learning_rate, **kwargs)
    elif optimizer_function == "plain_sgd":
        optimizer = SGD(params, learning_rate, momentum=0.0, weight_decay=0.0)
    else:
        raise ValueError("Invalid optimizer function. Must be One of ['sgd', 'plain_sgd']")

    return optimizer


def step_lr(base_lr, epoch, drop_epoch, factor=0.1):
    """
    Base rate until drop_epoch, then base rate times factor
    """
    return base_lr * factor if epoch >= drop_epoch else base_lr


class PlateauSchedule:
    """
    Multiply the learning rate by factor once the monitored loss has failed to
    improve for patience consecutive epochs
    """

    def __init__(self, learning_rate, patience=5, factor=0.1, min_delta=1e-4):
        self.learning_rate = learning_rate
        self.patience = patience
        self.factor = factor
        self.min_delta = min_delta
        self.best = np.inf
        self.stale = 0

    def step(self, loss):
        if loss < self.best - self.min_delta:
            self.best = loss
            self.stale = 0
        else:
            self.stale += 1
            if self.stale >= self.patience:
                self.learning_rate *= self.factor
                self.stale = 0
                logger.info(f"loss plateaued, learning rate reduced to {self.learning_rate:g}")
        return self.learning_rate
