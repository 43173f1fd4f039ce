#include <stdio.h>
#include <string.h>
#include "vtada.h"

int main(void) {
    double lr = 0.0;
    if (vtada_lr_at(0.0, &lr) != VTADA_STATUS_OK || lr != 0.01) return 1;
    if (vtada_lr_at(2.0, &lr) != VTADA_STATUS_CONTRACT) return 2;
    const char *msg = vtada_last_error_message();
    if (msg == NULL || strlen(msg) == 0) return 3;
    VtadaModel *model = NULL;
    if (vtada_checkpoint_load("/nonexistent/x.ckpt", &model) != VTADA_STATUS_DATA) return 4;
    if (model != NULL) return 5;
    vtada_model_free(NULL);
    printf("%s\n", vtada_version());
    return 0;
}
