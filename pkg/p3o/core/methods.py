import math
from typing import List, Sequence

import numpy as np

from p3o.core.errors import InputError, NumericError

def check_finite( values: np.ndarray, name: str, error: type = NumericError ):
    if not np.all( np.isfinite( values ) ):
        raise error( f"{ name } contains non-finite values" )

def check_same_length( name_a: str, a: Sequence, name_b: str, b: Sequence ):
    if len( a ) != len( b ):
        raise InputError(
            f"{ name_a } has length { len( a ) } but { name_b } has length { len( b ) }"
        )

def check_unit_interval( value: float, name: str, closed_right: bool = True ):
    upper_ok = value <= 1.0 if closed_right else value < 1.0

    if not ( 0.0 <= value and upper_ok ):
        bracket = "]" if closed_right else ")"
        raise InputError( f"{ name } must lie in [0, 1{ bracket }, got { value }" )

def poisson_draw( mean: float, rng: np.random.Generator ) -> int:
    """Draw from Poisson(mean) by inversion with sequential search.

    Consumes exactly one uniform from ``rng``.
    """
    if mean < 0:
        raise InputError( f"Poisson mean must be nonnegative, got { mean }" )

    u           = rng.random()
    k           = 0
    probability = math.exp( -mean )
    cumulative  = probability

    # the tail past 10 * (mean + 10) carries no mass at double precision
    limit = int( 10 * ( mean + 10 ) )

    while u > cumulative and k < limit:
        k           += 1
        probability *= mean / k
        cumulative  += probability

    return k

def spawn_rngs( seed: int, count: int ) -> List[ np.random.Generator ]:
    """Independent generator streams derived from one seed"""
    children = np.random.SeedSequence( seed ).spawn( count )

    return [ np.random.default_rng( child ) for child in children ]
