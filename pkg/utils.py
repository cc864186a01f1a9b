#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
通用工具模块

提供日志、配置文件读取、JSON保存/加载以及可复现随机数流等公共功能，
供仿真框架的各个模块共同使用。
"""

import hashlib
import json
import logging
import os

import numpy as np
import yaml

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def setup_logging(level="INFO", log_file="psp_simulation.log"):
    """配置日志系统

    同时输出到文件和控制台（控制台使用stderr，stdout保留给JSON结果）

    Args:
        level (str): 日志级别（DEBUG/INFO/WARNING/ERROR）
        log_file (str): 日志文件路径，为None时只输出到控制台
    """
    handlers = [logging.StreamHandler()]
    if log_file:
        handlers.insert(0, logging.FileHandler(log_file, encoding='utf-8'))
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format=LOG_FORMAT,
        handlers=handlers,
        force=True,
    )


def get_logger(name):
    """获取命名日志记录器

    Args:
        name (str): 日志记录器名称

    Returns:
        logging.Logger: 日志记录器
    """
    return logging.getLogger(name)


logger = get_logger("utils")


def load_config(config_file):
    """加载YAML/JSON配置文件

    JSON是YAML的子集，因此同一个加载函数可以读取两种格式

    Args:
        config_file (str): 配置文件路径

    Returns:
        dict: 配置信息字典

    Raises:
        Exception: 配置文件加载失败时抛出异常
    """
    try:
        with open(config_file, 'r', encoding='utf-8') as f:
            config = yaml.safe_load(f)
        logger.info(f"配置文件加载成功: {config_file}")
        return config or {}
    except Exception as e:
        logger.error(f"加载配置文件失败: {e}")
        raise


def to_jsonable(value):
    """把numpy类型和非有限浮点数转换为可JSON序列化的值"""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        # 非有限值统一输出为null
        return value if np.isfinite(value) else None
    return value


def ratio_to_json(value):
    """比值序列化：+∞输出为字符串"inf"，以区别于缺失值null"""
    if value is None:
        return None
    value = float(value)
    return "inf" if value == float("inf") else value


def ratio_from_json(value):
    return float("inf") if value == "inf" else float(value)


def dumps_canonical(data):
    """规范化JSON文本（键排序、固定缩进）"""
    return json.dumps(to_jsonable(data), ensure_ascii=False, indent=2, sort_keys=True)


def save_json(data, file_path):
    """保存数据到JSON文件

    Args:
        data: 要保存的数据
        file_path (str): 文件路径

    Returns:
        bool: 是否保存成功
    """
    try:
        directory = os.path.dirname(os.path.abspath(file_path))
        os.makedirs(directory, exist_ok=True)
        with open(file_path, 'w', encoding='utf-8') as f:
            f.write(dumps_canonical(data))
            f.write("\n")
        logger.info(f"已保存JSON文件: {file_path}")
        return True
    except Exception as e:
        logger.error(f"保存JSON文件失败: {e}")
        return False


def load_json(file_path):
    """从JSON文件加载数据

    Args:
        file_path (str): 文件路径

    Returns:
        任意JSON数据，文件不存在或解析失败时返回None
    """
    try:
        if os.path.exists(file_path):
            with open(file_path, 'r', encoding='utf-8') as f:
                return json.load(f)
        logger.warning(f"JSON文件不存在: {file_path}")
    except Exception as e:
        logger.error(f"加载JSON文件失败: {e}")
    return None


def derive_stream(master_seed, *labels):
    """根据主种子和标签派生独立的计数器型随机数流

    相同的(master_seed, labels)总是得到相同的流，不同标签的流互不重叠

    Args:
        master_seed (int): 64位主种子
        *labels: 运行序号、角色名等标签

    Returns:
        numpy.random.Generator: 基于Philox的随机数生成器
    """
    text = ":".join([str(int(master_seed))] + [str(label) for label in labels])
    digest = hashlib.sha256(text.encode('utf-8')).digest()
    key = np.frombuffer(digest[:16], dtype=np.uint64).copy()
    return np.random.Generator(np.random.Philox(key=key))


def child_stream(rng):
    """从已有生成器派生一个子生成器"""
    key = rng.integers(0, np.iinfo(np.uint64).max, size=2, dtype=np.uint64, endpoint=True)
    return np.random.Generator(np.random.Philox(key=key))
