import copy
import json
import pathlib

import jsonschema

prefix = pathlib.Path(__file__).parent.resolve()


def extend_with_default(validator_class):
    """Validator class that fills in the `default` of every missing property.

    Defaults are deep-copied, and nested objects are filled as validation
    descends into them, so an empty section comes out complete."""
    validate_properties = validator_class.VALIDATORS["properties"]

    def set_defaults(validator, properties, instance, schema):
        if isinstance(instance, dict):
            for name, subschema in properties.items():
                if "default" in subschema:
                    instance.setdefault(name, copy.deepcopy(subschema["default"]))
        yield from validate_properties(validator, properties, instance, schema)

    return jsonschema.validators.extend(validator_class, {"properties": set_defaults})


def load_schema(name):
    with (prefix / "schema" / name).open() as fid:
        return json.load(fid)


validator = extend_with_default(jsonschema.Draft7Validator)

# run configurations, and one record of a JSON-lines dataset
config_schema = load_schema("config.json")
config_validator = validator(config_schema)
triple_schema = load_schema("triple.json")
triple_validator = validator(triple_schema)
