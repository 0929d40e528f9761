"""
Validation for run configuration and input tables
"""
from typing import Any, Dict, List, Sequence

from src.models.signal import ALLOWED_ORDERS
from src.utils.errors import ConfigError

# section -> field -> accepted types
CONFIG_SCHEMA: Dict[str, Dict[str, tuple]] = {
    'synth': {
        'n_subjects': (int,),
        'preset': (str,),
        'duration_s': (int, float),
        'rate_hz': (int, float),
    },
    'evm': {
        'use_evm': (bool,),
        'alpha': (int, float),
        'low_hz': (int, float),
        'high_hz': (int, float),
        'order': (int,),
    },
    'window': {
        'length_s': (int, float),
        'stride_s': (int, float),
    },
    'forest': {
        'n_estimators': (int,),
        'max_depth': (int,),
        'max_features': (int, type(None)),
    },
    'cv': {
        'k': (int,),
        'grouped': (bool,),
    },
    'stream': {
        'pace': (str,),
        'health_every': (int,),
    },
}
TOP_LEVEL = {'seed': (int,), 'out': (str,)}
PACES = ('real', 'fast')


def _type_ok(value: Any, types: tuple) -> bool:
    # bool is an int subclass; only accept it where bool is asked for
    if isinstance(value, bool) and bool not in types:
        return False
    return isinstance(value, types)


def validate_config(data: Dict[str, Any]) -> Dict[str, Any]:
    """
    Structural and range validation of a (possibly partial) run configuration
    Returns: {'valid': bool, 'errors': dict}
    """
    errors = {}
    if not isinstance(data, dict):
        return {'valid': False, 'errors': {'config': 'Configuration must be a JSON object'}}

    for key, value in data.items():
        if key in TOP_LEVEL:
            if not _type_ok(value, TOP_LEVEL[key]):
                errors[key] = f'{key} has the wrong type'
        elif key in CONFIG_SCHEMA:
            if not isinstance(value, dict):
                errors[key] = f'{key} must be an object'
                continue
            for field, field_value in value.items():
                path = f'{key}.{field}'
                if field not in CONFIG_SCHEMA[key]:
                    errors[path] = f'Unknown key {path}'
                elif not _type_ok(field_value, CONFIG_SCHEMA[key][field]):
                    errors[path] = f'{path} has the wrong type'
        else:
            errors[key] = f'Unknown key {key}'
    if errors:
        return {'valid': False, 'errors': errors}

    synth = data.get('synth', {})
    if synth.get('n_subjects', 1) < 1:
        errors['synth.n_subjects'] = 'n_subjects must be at least 1'
    if synth.get('duration_s', 1) <= 0:
        errors['synth.duration_s'] = 'duration_s must be positive'
    rate = synth.get('rate_hz', 1.0)
    if not 0 < rate <= 1000:
        errors['synth.rate_hz'] = 'rate_hz must be in (0, 1000]'

    evm = data.get('evm', {})
    if evm.get('alpha', 0) < 0:
        errors['evm.alpha'] = 'alpha must be non-negative'
    if evm.get('order', 2) not in ALLOWED_ORDERS:
        errors['evm.order'] = f'order must be one of {ALLOWED_ORDERS}'
    low, high = evm.get('low_hz', 0.01), evm.get('high_hz', 0.2)
    if not 0 < low < high < rate / 2:
        errors['evm.band'] = 'Need 0 < low_hz < high_hz < rate_hz / 2'

    window = data.get('window', {})
    length, stride = window.get('length_s', 60.0), window.get('stride_s', 10.0)
    if length <= 0 or stride <= 0:
        errors['window'] = 'Window length and stride must be positive'
    elif stride > length:
        errors['window.stride_s'] = 'stride_s must not exceed length_s'

    forest = data.get('forest', {})
    for field in ('n_estimators', 'max_depth'):
        if forest.get(field, 1) < 1:
            errors[f'forest.{field}'] = f'{field} must be at least 1'
    if forest.get('max_features') is not None and forest['max_features'] < 1:
        errors['forest.max_features'] = 'max_features must be at least 1'

    if data.get('cv', {}).get('k', 5) < 2:
        errors['cv.k'] = 'k must be at least 2'

    stream = data.get('stream', {})
    if stream.get('pace', 'fast') not in PACES:
        errors['stream.pace'] = f'pace must be one of {PACES}'
    if stream.get('health_every', 1) < 1:
        errors['stream.health_every'] = 'health_every must be at least 1'

    return {
        'valid': len(errors) == 0,
        'errors': errors
    }


def validate_columns(columns: Sequence[str], expected: Sequence[str]) -> Dict[str, Any]:
    """
    Exact header check for CSV inputs
    """
    errors = {}
    columns, expected = list(columns), list(expected)
    missing = [c for c in expected if c not in columns]
    extra = [c for c in columns if c not in expected]
    if missing:
        errors['missing'] = missing
    if extra:
        errors['unexpected'] = extra
    if not errors and columns != expected:
        errors['order'] = 'Columns are not in the expected order'
    return {
        'valid': len(errors) == 0,
        'errors': errors
    }


def parse_index_list(text: str) -> List[int]:
    """'0,3,5' -> [0, 3, 5]"""
    try:
        return [int(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise ConfigError(f'Expected a comma-separated list of integers, got {text!r}')


def parse_float_list(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise ConfigError(f'Expected a comma-separated list of numbers, got {text!r}')
