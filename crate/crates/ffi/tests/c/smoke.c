/* Links against the static library and checks one bound and one verdict. */
#include <stdio.h>
#include <string.h>

#include "nnbound.h"

static const char *MODEL =
    "{\"layers\":["
    "{\"type\":\"dense\",\"weight\":[[1.0]],\"bias\":[0.5]},"
    "{\"type\":\"relu\"},"
    "{\"type\":\"dense\",\"weight\":[[-1.0]],\"bias\":[1.0]}]}";

static const char *HOLDS =
    "{\"id\":\"a\",\"input\":{\"type\":\"box\",\"lower\":[-1],\"upper\":[1]},\"out\":{\"c\":[1],\"d\":0.6}}";

int main(void) {
    NnbNetwork *net = NULL;
    NnbProperty *prop = NULL;
    if (nnb_network_from_json(MODEL, &net) != NNB_STATUS_OK) {
        fprintf(stderr, "model: %s\n", nnb_last_error());
        return 1;
    }
    if (nnb_property_from_json(HOLDS, &prop) != NNB_STATUS_OK) {
        fprintf(stderr, "property: %s\n", nnb_last_error());
        return 1;
    }
    double bound = 0.0;
    if (nnb_bound(net, prop, NNB_METHOD_CROWN, 0, &bound) != NNB_STATUS_OK || bound < 0.0999 || bound > 0.1001) {
        fprintf(stderr, "bound %f\n", bound);
        return 1;
    }
    NnbVerifyResult res;
    if (nnb_verify(net, prop, NNB_PRESET_BABSR, 0.0, &res, NULL, 0) != NNB_STATUS_OK ||
        res.decision != NNB_DECISION_VERIFIED) {
        fprintf(stderr, "verify failed\n");
        return 1;
    }
    if (nnb_network_from_json(NULL, &net) != NNB_STATUS_NULL_POINTER || strlen(nnb_last_error()) == 0) {
        return 1;
    }
    nnb_property_free(prop);
    nnb_network_free(net);
    puts("ok");
    return 0;
}
